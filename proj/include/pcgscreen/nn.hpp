#pragma once

// Parallel-branch 1D CNN over MFCC frames fused with handcrafted features,
// trained with class-weighted binary cross-entropy and Adam.
//
//   mfcc (rows x T) -> stem conv + ReLU -> 3 parallel convs + ReLU
//   -> global average pool each -> concat ++ handcrafted
//   -> dense + ReLU -> dense (2 logits) -> softmax
//
// All convolutions are stride 1 with zero "same" padding. Probability index 1
// is CHD.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcgscreen/audio_io.hpp"
#include "pcgscreen/common.hpp"
#include "pcgscreen/handcrafted.hpp"
#include "pcgscreen/metrics.hpp"
#include "pcgscreen/random.hpp"

namespace pcgscreen {

struct ModelConfig {
  std::size_t in_rows = 39;
  std::size_t stem_channels = 32;
  std::size_t stem_kernel = 3;
  std::size_t branch_channels = 32;
  std::array<std::size_t, 3> branch_kernels{3, 5, 7};
  std::size_t handcrafted_dim = 11;
  std::size_t hidden = 64;
  std::size_t classes = 2;
  bool use_mfcc = true;  // false: dense-only head over the handcrafted inputs

  std::size_t deep_dim() const { return use_mfcc ? 3 * branch_channels : 0; }
  std::size_t fused_dim() const { return deep_dim() + handcrafted_dim; }
  std::size_t min_frames() const {
    return use_mfcc ? std::max(stem_kernel, *std::max_element(branch_kernels.begin(), branch_kernels.end())) : 0;
  }
  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  if (c.classes != 2) fail(Errc::InvalidConfig, "the head is binary (classes = 2)");
  if (c.hidden == 0) fail(Errc::InvalidConfig, "hidden width must be positive");
  if (c.fused_dim() == 0) fail(Errc::InvalidConfig, "no inputs enabled");
  if (c.use_mfcc) {
    if (c.in_rows == 0 || c.stem_channels == 0 || c.branch_channels == 0)
      fail(Errc::InvalidConfig, "channel counts must be positive");
    if (c.stem_kernel % 2 == 0) fail(Errc::InvalidConfig, "stem kernel must be odd");
    for (auto k : c.branch_kernels)
      if (k % 2 == 0) fail(Errc::InvalidConfig, "branch kernels must be odd, got " + std::to_string(k));
  }
}

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // in elements
  std::size_t size = 0;
  std::size_t fan_in = 0;  // 0 for biases
};

struct ParamLayout {
  std::vector<TensorInfo> tensors;
  std::size_t total = 0;
  // element offsets
  std::size_t stem_w = 0, stem_b = 0;
  std::array<std::size_t, 3> branch_w{}, branch_b{};
  std::size_t dense1_w = 0, dense1_b = 0, dense2_w = 0, dense2_b = 0;
};

inline ParamLayout make_layout(const ModelConfig& c) {
  validate(c);
  ParamLayout L;
  const auto add = [&](std::string name, std::vector<std::size_t> shape, std::size_t fan_in) {
    std::size_t size = 1;
    for (auto s : shape) size *= s;
    L.tensors.push_back({std::move(name), std::move(shape), L.total, size, fan_in});
    L.total += size;
    return L.tensors.back().offset;
  };
  if (c.use_mfcc) {
    L.stem_w = add("stem.weight", {c.stem_channels, c.in_rows, c.stem_kernel}, c.in_rows * c.stem_kernel);
    L.stem_b = add("stem.bias", {c.stem_channels}, 0);
    for (std::size_t j = 0; j < 3; ++j) {
      const auto k = c.branch_kernels[j];
      const auto prefix = "branch" + std::to_string(j + 1);
      L.branch_w[j] = add(prefix + ".weight", {c.branch_channels, c.stem_channels, k}, c.stem_channels * k);
      L.branch_b[j] = add(prefix + ".bias", {c.branch_channels}, 0);
    }
  }
  L.dense1_w = add("dense1.weight", {c.hidden, c.fused_dim()}, c.fused_dim());
  L.dense1_b = add("dense1.bias", {c.hidden}, 0);
  L.dense2_w = add("dense2.weight", {c.classes, c.hidden}, c.hidden);
  L.dense2_b = add("dense2.bias", {c.classes}, 0);
  return L;
}

template <typename Real>
struct Network {
  ModelConfig config;
  ParamLayout layout;
  std::vector<Real> params;
  std::uint64_t seed = 0;

  std::span<Real> tensor(std::string_view name) {
    for (const auto& t : layout.tensors)
      if (t.name == name) return {params.data() + t.offset, t.size};
    fail(Errc::InvalidArgument, "no tensor named " + std::string(name));
  }
};

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
template <typename Real = double>
Network<Real> init_model(const ModelConfig& config, std::uint64_t seed) {
  Network<Real> net;
  net.config = config;
  net.layout = make_layout(config);
  net.seed = seed;
  net.params.assign(net.layout.total, Real(0));
  Rng rng(seed);
  for (const auto& t : net.layout.tensors) {
    if (t.fan_in == 0) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(t.fan_in));
    for (std::size_t i = 0; i < t.size; ++i) net.params[t.offset + i] = static_cast<Real>(rng.uniform(-limit, limit));
  }
  return net;
}

template <typename To, typename From>
Network<To> cast_network(const Network<From>& src) {
  Network<To> out;
  out.config = src.config;
  out.layout = src.layout;
  out.seed = src.seed;
  out.params.assign(src.params.begin(), src.params.end());
  return out;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace detail {

/// out[o][t] = b[o] + sum_{c,k} w[o][c][k] in[c][t + k - K/2], then ReLU.
template <typename Real>
void conv_same_relu(const Real* in, std::size_t cin, std::size_t T, const Real* w, const Real* b, std::size_t cout,
                    std::size_t K, Real* out) {
  const auto pad = static_cast<std::ptrdiff_t>(K / 2);
  const auto Ti = static_cast<std::ptrdiff_t>(T);
  for (std::size_t o = 0; o < cout; ++o) {
    Real* y = out + o * T;
    std::fill(y, y + T, b[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const Real* x = in + c * T;
      const Real* wk = w + (o * cin + c) * K;
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(k) - pad;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -s), t1 = std::min(Ti, Ti - s);
        const Real wv = wk[k];
        const Real* xs = x + s;
#pragma omp simd
        for (std::ptrdiff_t t = t0; t < t1; ++t) y[t] += wv * xs[t];
      }
    }
    for (std::size_t t = 0; t < T; ++t) y[t] = std::max(y[t], Real(0));
  }
}

/// Gradients of a same-padded conv given dL/d(pre-activation). din may be null.
template <typename Real>
void conv_same_backward(const Real* in, std::size_t cin, std::size_t T, const Real* w, std::size_t cout, std::size_t K,
                        const Real* dpre, Real* dw, Real* db, Real* din) {
  const auto pad = static_cast<std::ptrdiff_t>(K / 2);
  const auto Ti = static_cast<std::ptrdiff_t>(T);
  for (std::size_t o = 0; o < cout; ++o) {
    const Real* g = dpre + o * T;
    Real bsum = 0;
    for (std::size_t t = 0; t < T; ++t) bsum += g[t];
    db[o] += bsum;
    for (std::size_t c = 0; c < cin; ++c) {
      const Real* x = in + c * T;
      const std::size_t widx = (o * cin + c) * K;
      for (std::size_t k = 0; k < K; ++k) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(k) - pad;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -s), t1 = std::min(Ti, Ti - s);
        const Real* xs = x + s;
        Real acc = 0;
#pragma omp simd reduction(+ : acc)
        for (std::ptrdiff_t t = t0; t < t1; ++t) acc += g[t] * xs[t];
        dw[widx + k] += acc;
        if (din) {
          Real* dxs = din + c * T + s;
          const Real wv = w[widx + k];
#pragma omp simd
          for (std::ptrdiff_t t = t0; t < t1; ++t) dxs[t] += wv * g[t];
        }
      }
    }
  }
}

}  // namespace detail

/// Intermediate activations of one forward pass (kept for backprop).
template <typename Real>
struct ForwardState {
  std::size_t frames = 0;
  std::vector<Real> stem;                    // stem_channels x T, post-ReLU
  std::array<std::vector<Real>, 3> branch;   // branch_channels x T, post-ReLU
  std::vector<Real> fused;
  std::vector<Real> hidden;                  // post-ReLU
  std::array<Real, 2> logits{};
  std::array<Real, 2> probs{};
};

template <typename Real>
std::array<Real, 2> softmax2(const std::array<Real, 2>& z) {
  const Real m = std::max(z[0], z[1]);
  const Real e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

/// mfcc is in_rows x T (unused when use_mfcc is false).
template <typename Real>
void forward(const Network<Real>& net, const Matrix<Real>& mfcc, std::span<const Real> handcrafted,
             ForwardState<Real>& st) {
  const auto& c = net.config;
  const auto& L = net.layout;
  const Real* P = net.params.data();
  if (handcrafted.size() != c.handcrafted_dim)
    fail(Errc::ShapeMismatch, "handcrafted length " + std::to_string(handcrafted.size()) + ", expected " +
                                  std::to_string(c.handcrafted_dim));
  st.fused.assign(c.fused_dim(), Real(0));
  if (c.use_mfcc) {
    if (mfcc.rows() != c.in_rows) fail(Errc::ShapeMismatch, "MFCC rows " + std::to_string(mfcc.rows()));
    if (mfcc.cols() < c.min_frames()) fail(Errc::ShapeMismatch, "too few MFCC frames");
    const std::size_t T = mfcc.cols();
    st.frames = T;
    st.stem.resize(c.stem_channels * T);
    detail::conv_same_relu(mfcc.data().data(), c.in_rows, T, P + L.stem_w, P + L.stem_b, c.stem_channels,
                           c.stem_kernel, st.stem.data());
    for (std::size_t j = 0; j < 3; ++j) {
      st.branch[j].resize(c.branch_channels * T);
      detail::conv_same_relu(st.stem.data(), c.stem_channels, T, P + L.branch_w[j], P + L.branch_b[j],
                             c.branch_channels, c.branch_kernels[j], st.branch[j].data());
      for (std::size_t o = 0; o < c.branch_channels; ++o) {
        const Real* h = st.branch[j].data() + o * T;
        Real s = 0;
        for (std::size_t t = 0; t < T; ++t) s += h[t];
        st.fused[j * c.branch_channels + o] = s / static_cast<Real>(T);
      }
    }
  }
  std::copy(handcrafted.begin(), handcrafted.end(), st.fused.begin() + static_cast<std::ptrdiff_t>(c.deep_dim()));

  const std::size_t F = c.fused_dim();
  st.hidden.assign(c.hidden, Real(0));
  for (std::size_t h = 0; h < c.hidden; ++h) {
    const Real* w = P + L.dense1_w + h * F;
    Real acc = P[L.dense1_b + h];
    for (std::size_t i = 0; i < F; ++i) acc += w[i] * st.fused[i];
    st.hidden[h] = std::max(acc, Real(0));
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const Real* w = P + L.dense2_w + k * c.hidden;
    Real acc = P[L.dense2_b + k];
    for (std::size_t h = 0; h < c.hidden; ++h) acc += w[h] * st.hidden[h];
    st.logits[k] = acc;
  }
  st.probs = softmax2(st.logits);
}

template <typename Real>
std::array<Real, 2> forward(const Network<Real>& net, const Matrix<Real>& mfcc, std::span<const Real> handcrafted) {
  ForwardState<Real> st;
  forward(net, mfcc, handcrafted, st);
  return st.probs;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct ClassWeights {
  double w0 = 1.0;  // NonCHD
  double w1 = 1.0;  // CHD
  double operator[](int label) const { return label != 0 ? w1 : w0; }
};

/// W_i = K / (N * n_i) with K samples, N = 2 classes and n_i samples of class i.
inline ClassWeights class_weights(std::span<const int> labels) {
  const auto pos = static_cast<double>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
  const auto total = static_cast<double>(labels.size());
  const double neg = total - pos;
  if (pos == 0 || neg == 0) fail(Errc::SingleClassOnly, "class weights need both classes");
  return {total / (2.0 * neg), total / (2.0 * pos)};
}

inline constexpr double kProbClamp = 1e-7;

/// Mean of W_y * BCE(p, y) with p clamped to [1e-7, 1 - 1e-7].
inline double weighted_bce(std::span<const double> probs_pos, std::span<const int> labels, const ClassWeights& w) {
  if (probs_pos.size() != labels.size()) fail(Errc::LengthMismatch, "probs vs labels");
  if (probs_pos.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double p = std::clamp(probs_pos[i], kProbClamp, 1.0 - kProbClamp);
    sum += w[labels[i]] * (labels[i] != 0 ? -std::log(p) : -std::log(1.0 - p));
  }
  return sum / static_cast<double>(labels.size());
}

template <typename Real>
struct Sample {
  const Matrix<Real>* mfcc = nullptr;
  std::span<const Real> handcrafted;
  int label = 0;
};

/// Per-sample loss term from a forward state (same clamp as weighted_bce).
template <typename Real>
Real sample_loss(const ForwardState<Real>& st, int label, double weight) {
  const Real lo = static_cast<Real>(kProbClamp);
  const Real p = std::clamp(st.probs[1], lo, Real(1) - lo);
  return static_cast<Real>(weight) * (label != 0 ? -std::log(p) : -std::log(Real(1) - p));
}

template <typename Real>
Real batch_loss(const Network<Real>& net, std::span<const Sample<Real>> batch, const ClassWeights& w) {
  if (batch.empty()) fail(Errc::EmptyDataset, "empty batch");
  ForwardState<Real> st;
  Real sum = 0;
  for (const auto& s : batch) {
    forward(net, *s.mfcc, s.handcrafted, st);
    sum += sample_loss(st, s.label, w[s.label]);
  }
  return sum / static_cast<Real>(batch.size());
}

template <typename Real>
struct GradientResult {
  Real loss = 0;
  std::vector<Real> grads;  // same layout as Network::params
};

/// Exact gradients of the batch-mean weighted BCE with respect to every parameter.
template <typename Real>
GradientResult<Real> backward(const Network<Real>& net, std::span<const Sample<Real>> batch, const ClassWeights& w) {
  if (batch.empty()) fail(Errc::EmptyDataset, "empty batch");
  const auto& c = net.config;
  const auto& L = net.layout;
  const Real* P = net.params.data();
  GradientResult<Real> out;
  out.grads.assign(L.total, Real(0));
  Real* G = out.grads.data();
  const std::size_t F = c.fused_dim();
  const Real inv_b = Real(1) / static_cast<Real>(batch.size());
  const Real lo = static_cast<Real>(kProbClamp);

  ForwardState<Real> st;
  std::vector<Real> d_hidden(c.hidden), d_fused(F), d_stem, d_branch;
  for (const auto& s : batch) {
    forward(net, *s.mfcc, s.handcrafted, st);
    const Real weight = static_cast<Real>(w[s.label]);
    out.loss += sample_loss(st, s.label, w[s.label]) * inv_b;

    // dL/dz for softmax + BCE on p = probs[1]; zero inside the clamp.
    const Real p = st.probs[1];
    if (p <= lo || p >= Real(1) - lo) continue;
    const Real g1 = weight * (p - static_cast<Real>(s.label != 0)) * inv_b;
    const std::array<Real, 2> dz{-g1, g1};

    std::fill(d_hidden.begin(), d_hidden.end(), Real(0));
    for (std::size_t k = 0; k < 2; ++k) {
      G[L.dense2_b + k] += dz[k];
      for (std::size_t h = 0; h < c.hidden; ++h) {
        G[L.dense2_w + k * c.hidden + h] += dz[k] * st.hidden[h];
        d_hidden[h] += P[L.dense2_w + k * c.hidden + h] * dz[k];
      }
    }
    std::fill(d_fused.begin(), d_fused.end(), Real(0));
    for (std::size_t h = 0; h < c.hidden; ++h) {
      if (!(st.hidden[h] > 0)) continue;
      const Real g = d_hidden[h];
      G[L.dense1_b + h] += g;
      Real* gw = G + L.dense1_w + h * F;
      const Real* pw = P + L.dense1_w + h * F;
      for (std::size_t i = 0; i < F; ++i) {
        gw[i] += g * st.fused[i];
        d_fused[i] += pw[i] * g;
      }
    }
    if (!c.use_mfcc) continue;

    const std::size_t T = st.frames;
    const Real inv_t = Real(1) / static_cast<Real>(T);
    d_stem.assign(c.stem_channels * T, Real(0));
    d_branch.resize(c.branch_channels * T);
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t o = 0; o < c.branch_channels; ++o) {
        const Real g = d_fused[j * c.branch_channels + o] * inv_t;
        const Real* h = st.branch[j].data() + o * T;
        Real* d = d_branch.data() + o * T;
        for (std::size_t t = 0; t < T; ++t) d[t] = h[t] > 0 ? g : Real(0);
      }
      detail::conv_same_backward(st.stem.data(), c.stem_channels, T, P + L.branch_w[j], c.branch_channels,
                                 c.branch_kernels[j], d_branch.data(), G + L.branch_w[j], G + L.branch_b[j],
                                 d_stem.data());
    }
    for (std::size_t i = 0; i < d_stem.size(); ++i)
      if (!(st.stem[i] > 0)) d_stem[i] = 0;
    detail::conv_same_backward(s.mfcc->data().data(), c.in_rows, T, P + L.stem_w, c.stem_channels, c.stem_kernel,
                               d_stem.data(), G + L.stem_w, G + L.stem_b, static_cast<Real*>(nullptr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;  // epochs without validation improvement
  std::uint64_t seed = 42;
  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& t) {
  if (!(t.lr > 0)) fail(Errc::InvalidConfig, "learning rate must be positive");
  if (t.batch_size == 0) fail(Errc::InvalidConfig, "batch size must be >= 1");
  if (t.max_epochs == 0) fail(Errc::InvalidConfig, "max_epochs must be >= 1");
  if (!(t.beta1 >= 0 && t.beta1 < 1 && t.beta2 >= 0 && t.beta2 < 1 && t.eps > 0))
    fail(Errc::InvalidConfig, "Adam hyperparameters out of range");
}

template <typename Real>
class Adam {
 public:
  Adam(std::size_t n, const TrainConfig& cfg) : cfg_(cfg), m_(n, Real(0)), v_(n, Real(0)) {}

  void step(std::vector<Real>& params, const std::vector<Real>& grads) {
    ++t_;
    const Real b1 = static_cast<Real>(cfg_.beta1), b2 = static_cast<Real>(cfg_.beta2);
    const Real c1 = static_cast<Real>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const Real c2 = static_cast<Real>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const Real lr = static_cast<Real>(cfg_.lr), eps = static_cast<Real>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1 - b1) * grads[i];
      v_[i] = b2 * v_[i] + (1 - b2) * grads[i] * grads[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Real> m_, v_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_auroc;  // empty when the validation set has one class
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

inline nlohmann::json to_json(const TrainHistory& h) {
  auto epochs = nlohmann::json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_auroc", optional_json(e.val_auroc)}});
  return {{"epochs", epochs}, {"best_epoch", h.best_epoch}, {"stopped_early", h.stopped_early}};
}

template <typename Real>
std::vector<double> predict_samples(const Network<Real>& net, std::span<const Sample<Real>> samples) {
  std::vector<double> out;
  out.reserve(samples.size());
  ForwardState<Real> st;
  for (const auto& s : samples) {
    forward(net, *s.mfcc, s.handcrafted, st);
    out.push_back(static_cast<double>(st.probs[1]));
  }
  return out;
}

template <typename Real>
struct TrainResult {
  Network<Real> model;
  TrainHistory history;
};

/// Mini-batch Adam with a seeded shuffle per epoch. Returns the parameters of
/// the epoch with the best validation AUROC, ties broken by lower validation
/// loss (loss alone when AUROC is undefined). Stops after `patience` epochs
/// without improvement.
template <typename Real>
TrainResult<Real> train(Network<Real> model, std::span<const Sample<Real>> train_set,
                        std::span<const Sample<Real>> val_set, const ClassWeights& weights, const TrainConfig& cfg) {
  validate(cfg);
  if (train_set.empty() || val_set.empty()) fail(Errc::EmptyDataset, "training and validation sets must be non-empty");

  std::vector<int> val_labels;
  for (const auto& s : val_set) val_labels.push_back(s.label);
  const auto [vpos, vneg] = detail::class_counts(val_labels);
  const bool auroc_defined = vpos > 0 && vneg > 0;

  Adam<Real> opt(model.params.size(), cfg);
  Rng rng(derive_seed(cfg.seed, 0x7472616eULL));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Sample<Real>> batch;

  TrainResult<Real> result{model, {}};
  double best_score = -std::numeric_limits<double>::infinity();
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_set[order[i]]);
      auto g = backward(model, std::span<const Sample<Real>>(batch), weights);
      loss_sum += static_cast<double>(g.loss) * static_cast<double>(end - start);
      opt.step(model.params, g.grads);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto val_probs = predict_samples(model, val_set);
    rec.val_loss = weighted_bce(val_probs, val_labels, weights);
    if (auroc_defined) rec.val_auroc = roc_auroc(val_probs, val_labels).auroc;
    result.history.epochs.push_back(rec);

    const double score = rec.val_auroc ? *rec.val_auroc : -rec.val_loss;
    if (score > best_score || (score == best_score && rec.val_loss < best_loss)) {
      best_score = score;
      best_loss = rec.val_loss;
      since_best = 0;
      result.model = model;
      result.history.best_epoch = epoch;
    } else if (++since_best >= cfg.patience) {
      result.history.stopped_early = true;
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference bundle and checkpoint
// ---------------------------------------------------------------------------

/// Per-dimension affine standardization fitted on training data.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  double apply(std::size_t i, double v) const { return (v - mean[i]) / std[i]; }
};

/// Fits mean / sample SD per column; SD below 1e-8 is replaced by 1.
inline Standardizer fit_standardizer(const std::vector<std::vector<double>>& columns) {
  Standardizer s;
  for (const auto& col : columns) {
    const auto [m, sd] = mean_sd(col);
    s.mean.push_back(m);
    s.std.push_back(sd > 1e-8 ? sd : 1.0);
  }
  return s;
}

/// One recording's cached features.
struct FeatureBundle {
  Matrix<float> mfcc;  // 39 x T
  HandcraftedVector handcrafted{};
  bool quality_flag = false;
};

/// Everything needed to score a recording: network plus input statistics.
struct Classifier {
  Network<float> net;
  std::vector<std::size_t> handcrafted_indices;  // which of the 11 features feed the head
  Standardizer mfcc_norm;                        // per MFCC row
  Standardizer handcrafted_norm;                 // per used handcrafted feature
  std::array<double, kHrvDim> hrv_medians{};     // imputation for failed beat detection
  ClassWeights class_weights;
  TrainConfig train_config;
};

/// Imputes, selects and standardizes the handcrafted inputs.
inline std::vector<float> prepare_handcrafted(const Classifier& clf, const HandcraftedVector& raw) {
  std::vector<float> out;
  out.reserve(clf.handcrafted_indices.size());
  for (std::size_t j = 0; j < clf.handcrafted_indices.size(); ++j) {
    const auto idx = clf.handcrafted_indices[j];
    double v = raw[idx];
    if (!std::isfinite(v) && idx < kHrvDim) v = clf.hrv_medians[idx];
    out.push_back(static_cast<float>(clf.handcrafted_norm.apply(j, v)));
  }
  return out;
}

inline Matrix<float> prepare_mfcc(const Classifier& clf, const Matrix<float>& raw) {
  if (!clf.net.config.use_mfcc) return {};
  if (raw.rows() != clf.mfcc_norm.mean.size()) fail(Errc::ShapeMismatch, "MFCC rows do not match the model");
  Matrix<float> out(raw.rows(), raw.cols());
  for (std::size_t r = 0; r < raw.rows(); ++r)
    for (std::size_t t = 0; t < raw.cols(); ++t)
      out(r, t) = static_cast<float>(clf.mfcc_norm.apply(r, raw(r, t)));
  return out;
}

/// Probability of CHD for one recording.
inline double predict_recording(const Classifier& clf, const FeatureBundle& fb) {
  const auto mfcc = prepare_mfcc(clf, fb.mfcc);
  const auto hc = prepare_handcrafted(clf, fb.handcrafted);
  return static_cast<double>(forward(clf.net, mfcc, std::span<const float>(hc))[1]);
}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"in_rows", c.in_rows},
          {"stem_channels", c.stem_channels},
          {"stem_kernel", c.stem_kernel},
          {"branch_channels", c.branch_channels},
          {"branch_kernels", c.branch_kernels},
          {"handcrafted_dim", c.handcrafted_dim},
          {"hidden", c.hidden},
          {"classes", c.classes},
          {"use_mfcc", c.use_mfcc}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  c.in_rows = j.value("in_rows", c.in_rows);
  c.stem_channels = j.value("stem_channels", c.stem_channels);
  c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
  c.branch_channels = j.value("branch_channels", c.branch_channels);
  c.branch_kernels = j.value("branch_kernels", c.branch_kernels);
  c.handcrafted_dim = j.value("handcrafted_dim", c.handcrafted_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.classes = j.value("classes", c.classes);
  c.use_mfcc = j.value("use_mfcc", c.use_mfcc);
  return c;
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"optimizer", "adam"}, {"lr", t.lr},     {"beta1", t.beta1},
          {"beta2", t.beta2},    {"eps", t.eps},   {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs}, {"patience", t.patience}, {"seed", t.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig t = {}) {
  t.lr = j.value("lr", t.lr);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.eps = j.value("eps", t.eps);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.patience = j.value("patience", t.patience);
  t.seed = j.value("seed", t.seed);
  return t;
}

/// Writes model.json and weights.bin (row-major float32 LE at byte offsets).
inline void save_checkpoint(const Classifier& clf, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto tensors = nlohmann::json::array();
  for (const auto& t : clf.net.layout.tensors)
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset * 4}});
  std::vector<std::string> hc_names;
  for (auto i : clf.handcrafted_indices) hc_names.emplace_back(kHandcraftedNames[i]);
  const nlohmann::json meta = {
      {"format_version", kCheckpointVersion},
      {"model_config", to_json(clf.net.config)},
      {"train_config", to_json(clf.train_config)},
      {"init_seed", clf.net.seed},
      {"tensors", tensors},
      {"handcrafted_features", hc_names},
      {"handcrafted_indices", clf.handcrafted_indices},
      {"handcrafted_zscore", {{"mean", clf.handcrafted_norm.mean}, {"std", clf.handcrafted_norm.std}}},
      {"mfcc_zscore", {{"mean", clf.mfcc_norm.mean}, {"std", clf.mfcc_norm.std}}},
      {"hrv_impute_medians", clf.hrv_medians},
      {"class_weights", {clf.class_weights.w0, clf.class_weights.w1}},
  };
  detail::write_file_bytes(dir / "model.json", meta.dump(2) + "\n");
  std::string bin;
  bin.reserve(clf.net.params.size() * 4);
  for (float v : clf.net.params) le::put_f32(bin, v);
  detail::write_file_bytes(dir / "weights.bin", bin);
}

inline Classifier load_checkpoint(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_file_bytes(dir / "model.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::CorruptHeader, "model.json: " + std::string(e.what()));
  }
  if (meta.value("format_version", -1) != kCheckpointVersion)
    fail(Errc::VersionMismatch, "checkpoint format_version " + meta.value("format_version", nlohmann::json()).dump());
  Classifier clf;
  clf.net.config = model_config_from_json(meta.at("model_config"));
  clf.net.layout = make_layout(clf.net.config);
  clf.net.seed = meta.value("init_seed", std::uint64_t{0});
  clf.train_config = train_config_from_json(meta.at("train_config"));
  clf.handcrafted_indices = meta.at("handcrafted_indices").get<std::vector<std::size_t>>();
  clf.handcrafted_norm.mean = meta.at("handcrafted_zscore").at("mean").get<std::vector<double>>();
  clf.handcrafted_norm.std = meta.at("handcrafted_zscore").at("std").get<std::vector<double>>();
  clf.mfcc_norm.mean = meta.at("mfcc_zscore").at("mean").get<std::vector<double>>();
  clf.mfcc_norm.std = meta.at("mfcc_zscore").at("std").get<std::vector<double>>();
  clf.hrv_medians = meta.at("hrv_impute_medians").get<std::array<double, kHrvDim>>();
  const auto cw = meta.at("class_weights").get<std::array<double, 2>>();
  clf.class_weights = {cw[0], cw[1]};
  if (clf.handcrafted_indices.size() != clf.net.config.handcrafted_dim ||
      clf.handcrafted_norm.mean.size() != clf.handcrafted_indices.size())
    fail(Errc::ShapeMismatch, "handcrafted statistics do not match the model config");

  const auto tensors = meta.at("tensors");
  if (tensors.size() != clf.net.layout.tensors.size()) fail(Errc::ShapeMismatch, "tensor count mismatch");
  const auto bin = detail::read_file_bytes(dir / "weights.bin");
  const auto* p = reinterpret_cast<const unsigned char*>(bin.data());
  clf.net.params.assign(clf.net.layout.total, 0.0f);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = clf.net.layout.tensors[i];
    if (tensors[i].at("name") != t.name || tensors[i].at("shape").get<std::vector<std::size_t>>() != t.shape)
      fail(Errc::ShapeMismatch, "tensor " + t.name + " does not match the architecture");
    const auto off = tensors[i].at("offset").get<std::size_t>();
    if (off % 4 != 0 || off + 4 * t.size > bin.size()) fail(Errc::CorruptHeader, "tensor " + t.name + " out of range");
    for (std::size_t k = 0; k < t.size; ++k) clf.net.params[t.offset + k] = le::get_f32(p + off + 4 * k);
  }
  return clf;
}

}  // namespace pcgscreen
