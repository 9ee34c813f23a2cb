#pragma once

// Central-difference check of nn backward(), shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pcgscreen/nn.hpp"

namespace testutil {

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // ReLU pattern changed between theta - h and theta + h
  double max_rel_error = 0.0;
};

struct RandomBatch {
  std::vector<pcgscreen::Matrix<double>> mfcc;
  std::vector<std::vector<double>> handcrafted;
  std::vector<pcgscreen::Sample<double>> samples;
};

inline RandomBatch random_batch(const pcgscreen::ModelConfig& cfg, std::size_t n, std::size_t frames,
                                pcgscreen::Rng& rng) {
  RandomBatch b;
  b.mfcc.reserve(n);
  b.handcrafted.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.mfcc.emplace_back(cfg.in_rows, frames);
    for (auto& v : b.mfcc.back().data()) v = rng.normal();
    b.handcrafted.emplace_back(cfg.handcrafted_dim);
    for (auto& v : b.handcrafted.back()) v = rng.normal();
  }
  for (std::size_t i = 0; i < n; ++i)
    b.samples.push_back({&b.mfcc[i], b.handcrafted[i], static_cast<int>(i % 2)});
  return b;
}

/// Sign pattern of every ReLU in the network over the batch.
inline std::vector<bool> relu_pattern(const pcgscreen::Network<double>& net,
                                      const std::vector<pcgscreen::Sample<double>>& batch) {
  std::vector<bool> out;
  pcgscreen::ForwardState<double> st;
  for (const auto& s : batch) {
    pcgscreen::forward(net, *s.mfcc, s.handcrafted, st);
    for (double v : st.stem) out.push_back(v > 0);
    for (const auto& br : st.branch)
      for (double v : br) out.push_back(v > 0);
    for (double v : st.hidden) out.push_back(v > 0);
  }
  return out;
}

/// Samples `n_params` distinct parameters and compares backward() to central differences.
/// Relative error is |a - n| / max(|a|, |n|, 1e-6).
inline GradCheckReport gradient_check(pcgscreen::Network<double> net, const std::vector<pcgscreen::Sample<double>>& batch,
                                      const pcgscreen::ClassWeights& w, std::size_t n_params, pcgscreen::Rng& rng,
                                      double h = 1e-4) {
  const std::span<const pcgscreen::Sample<double>> span(batch);
  const auto analytic = pcgscreen::backward(net, span, w).grads;
  std::vector<std::size_t> idx(net.params.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng.shuffle(std::span<std::size_t>(idx));

  GradCheckReport rep;
  for (std::size_t i = 0; i < idx.size() && rep.checked < n_params; ++i) {
    const std::size_t k = idx[i];
    const double orig = net.params[k];
    net.params[k] = orig + h;
    const double lp = pcgscreen::batch_loss(net, span, w);
    const auto pat_p = relu_pattern(net, batch);
    net.params[k] = orig - h;
    const double lm = pcgscreen::batch_loss(net, span, w);
    const auto pat_m = relu_pattern(net, batch);
    net.params[k] = orig;
    if (pat_p != pat_m) {
      ++rep.skipped;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * h);
    const double a = analytic[k];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    rep.max_rel_error = std::max(rep.max_rel_error, rel);
    ++rep.checked;
  }
  return rep;
}

}  // namespace testutil
