#pragma once

// Signal primitives: Butterworth band-pass (biquad cascade), z-score, FFT, STFT.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "pcgscreen/common.hpp"

namespace pcgscreen {

// ---------------------------------------------------------------------------
// Butterworth band-pass
// ---------------------------------------------------------------------------

struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  /// H(z) evaluated at z = e^{jw}.
  std::complex<double> response(double w) const {
    const std::complex<double> z1 = std::polar(1.0, -w);
    const std::complex<double> z2 = z1 * z1;
    return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
  }

  /// Roots of z^2 + a1 z + a2.
  std::array<std::complex<double>, 2> poles() const {
    const std::complex<double> disc = std::sqrt(std::complex<double>(a1 * a1 - 4.0 * a2));
    return {(-a1 + disc) / 2.0, (-a1 - disc) / 2.0};
  }
};

struct BandpassSpec {
  int order = 4;
  double low_hz = 25.0;
  double high_hz = 400.0;
  double sample_rate_hz = 4000.0;
};

struct FilterCoefficients {
  std::vector<Biquad> sections;
  BandpassSpec design;

  std::complex<double> response_at_hz(double f) const {
    const double w = 2.0 * std::numbers::pi * f / design.sample_rate_hz;
    std::complex<double> h = 1.0;
    for (const auto& s : sections) h *= s.response(w);
    return h;
  }

  double gain_db_at_hz(double f) const { return 20.0 * std::log10(std::abs(response_at_hz(f))); }
};

/// Digital Butterworth band-pass of the given (even) order.
///
/// An order/2 analog low-pass prototype is mapped to a band-pass with edges
/// prewarped for the bilinear transform, so both -3 dB points land exactly on
/// low_hz and high_hz. Each conjugate pole pair becomes one biquad with
/// numerator 1 - z^-2 (one zero at DC and one at Nyquist). The overall gain is
/// normalized to 1 at the geometric-mean centre frequency and spread evenly
/// across sections.
inline FilterCoefficients design_butterworth_bandpass(int order, double low_hz, double high_hz,
                                                      double fs_hz) {
  if (order < 2 || order % 2 != 0) fail(Errc::InvalidBand, "order must be even and >= 2");
  if (!(low_hz > 0.0 && low_hz < high_hz && high_hz < fs_hz / 2.0))
    fail(Errc::InvalidBand, "need 0 < low < high < fs/2");

  using cd = std::complex<double>;
  const double pi = std::numbers::pi;
  const double two_fs = 2.0 * fs_hz;
  const double wl = two_fs * std::tan(pi * low_hz / fs_hz);
  const double wh = two_fs * std::tan(pi * high_hz / fs_hz);
  const double bw = wh - wl;
  const double w0sq = wl * wh;

  const int n = order / 2;
  std::vector<cd> zpoles;
  zpoles.reserve(static_cast<std::size_t>(order));
  for (int k = 0; k < n; ++k) {
    const cd p = std::polar(1.0, pi * (2.0 * k + n + 1.0) / (2.0 * n));
    const cd pb = p * bw / 2.0;
    const cd root = std::sqrt(pb * pb - w0sq);
    for (const cd s : {pb + root, pb - root}) zpoles.push_back((two_fs + s) / (two_fs - s));
  }

  // Pair each pole in the upper half-plane with its conjugate; real poles pair up in order.
  std::vector<cd> upper, real;
  for (const cd z : zpoles) {
    if (z.imag() > 1e-12) upper.push_back(z);
    else if (std::abs(z.imag()) <= 1e-12) real.push_back(z);
  }
  FilterCoefficients fc;
  fc.design = {order, low_hz, high_hz, fs_hz};
  for (const cd z : upper) fc.sections.push_back({1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)});
  for (std::size_t i = 0; i + 1 < real.size(); i += 2)
    fc.sections.push_back(
        {1.0, 0.0, -1.0, -(real[i].real() + real[i + 1].real()), real[i].real() * real[i + 1].real()});
  if (fc.sections.size() != static_cast<std::size_t>(n))
    fail(Errc::UnstableDesign, "pole pairing failed");

  for (const auto& s : fc.sections)
    for (const cd p : s.poles())
      if (!(std::abs(p) < 1.0)) fail(Errc::UnstableDesign, "pole on or outside the unit circle");

  const double f0 = fs_hz / pi * std::atan(std::sqrt(w0sq) / two_fs);
  const double g = std::abs(fc.response_at_hz(f0));
  const double per_section = std::pow(g, -1.0 / static_cast<double>(n));
  for (auto& s : fc.sections) {
    s.b0 *= per_section;
    s.b1 *= per_section;
    s.b2 *= per_section;
  }
  return fc;
}

/// Causal single pass through the cascade (transposed direct form II, zero initial state).
inline std::vector<double> filter_signal(const FilterCoefficients& coeffs, std::span<const double> x) {
  if (x.empty()) fail(Errc::EmptySignal, "filter input is empty");
  std::vector<double> y(x.begin(), x.end());
  for (const auto& s : coeffs.sections) {
    double z1 = 0.0, z2 = 0.0;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

inline double mean_of(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample (n-1) standard deviation.
inline double sample_stddev(std::span<const double> x) {
  const double m = mean_of(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

inline std::vector<double> zscore_normalize(std::span<const double> x) {
  if (x.size() < 2) fail(Errc::TooShort, "z-score needs at least 2 samples");
  const double m = mean_of(x);
  const double sd = sample_stddev(x);
  if (!(sd > 1e-12)) fail(Errc::ConstantSignal, "standard deviation below 1e-12");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - m) / sd;
  return y;
}

// ---------------------------------------------------------------------------
// FFT
// ---------------------------------------------------------------------------

/// Unnormalized forward DFT, X[k] = sum_n x[n] e^{-2 pi i k n / N}, for any N.
/// Powers of two use an iterative radix-2 kernel; other sizes go through
/// Bluestein's chirp-z algorithm on a padded power-of-two plan.
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n) {
    if (n == 0) fail(Errc::InvalidArgument, "FFT size must be positive");
    if (std::has_single_bit(n)) {
      init_radix2(n);
    } else {
      init_bluestein();
    }
  }

  std::size_t size() const noexcept { return n_; }

  void forward(std::vector<std::complex<double>>& a) const {
    if (a.size() != n_) fail(Errc::ShapeMismatch, "FFT buffer size mismatch");
    if (chirp_.empty()) {
      radix2(a);
    } else {
      bluestein(a);
    }
  }

 private:
  void init_radix2(std::size_t n) {
    m_ = n;
    rev_.resize(n);
    const int bits = std::countr_zero(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1u) << (bits - 1 - b);
      rev_[i] = r;
    }
    twiddle_.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k)
      twiddle_[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
  }

  void radix2(std::vector<std::complex<double>>& a) const {
    const std::size_t n = m_;
    for (std::size_t i = 0; i < n; ++i)
      if (i < rev_[i]) std::swap(a[i], a[rev_[i]]);
    for (std::size_t len = 2; len <= n; len <<= 1) {
      const std::size_t half = len / 2, stride = n / len;
      for (std::size_t i = 0; i < n; i += len)
        for (std::size_t j = 0; j < half; ++j) {
          const auto t = a[i + j + half] * twiddle_[j * stride];
          a[i + j + half] = a[i + j] - t;
          a[i + j] += t;
        }
    }
  }

  void init_bluestein() {
    const std::size_t m = std::bit_ceil(2 * n_ - 1);
    init_radix2(m);
    chirp_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      // k^2 mod 2n keeps the angle argument small.
      const auto k2 = static_cast<double>((k * k) % (2 * n_));
      chirp_[k] = std::polar(1.0, -std::numbers::pi * k2 / static_cast<double>(n_));
    }
    kernel_.assign(m, {0.0, 0.0});
    kernel_[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n_; ++k) kernel_[k] = kernel_[m - k] = std::conj(chirp_[k]);
    radix2(kernel_);
  }

  void bluestein(std::vector<std::complex<double>>& a) const {
    std::vector<std::complex<double>> buf(m_, {0.0, 0.0});
    for (std::size_t k = 0; k < n_; ++k) buf[k] = a[k] * chirp_[k];
    radix2(buf);
    for (std::size_t k = 0; k < m_; ++k) buf[k] = std::conj(buf[k] * kernel_[k]);
    radix2(buf);  // inverse via conjugation
    const double scale = 1.0 / static_cast<double>(m_);
    for (std::size_t k = 0; k < n_; ++k) a[k] = std::conj(buf[k]) * scale * chirp_[k];
  }

  std::size_t n_;
  std::size_t m_ = 0;
  std::vector<std::size_t> rev_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<std::complex<double>> chirp_, kernel_;
};

// ---------------------------------------------------------------------------
// STFT
// ---------------------------------------------------------------------------

struct StftConfig {
  std::size_t win_len = 400;
  std::size_t hop = 200;
  std::size_t n_fft = 1024;
  double sample_rate_hz = 4000.0;
};

/// Symmetric Hamming window, 0.54 - 0.46 cos(2 pi n / (L - 1)).
inline std::vector<double> hamming_window(std::size_t len) {
  std::vector<double> w(len, 1.0);
  if (len < 2) return w;
  for (std::size_t i = 0; i < len; ++i)
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                  static_cast<double>(len - 1));
  return w;
}

inline std::size_t stft_frame_count(std::size_t n_samples, const StftConfig& cfg) {
  if (n_samples < cfg.win_len) return 0;
  return (n_samples - cfg.win_len) / cfg.hop + 1;
}

struct Spectrogram {
  Matrix<double> power;  // n_frames x n_bins, |FFT|^2
  std::vector<double> bin_freqs_hz;
  std::vector<double> frame_times_s;  // frame start times
  StftConfig config;

  std::size_t n_frames() const { return power.rows(); }
  std::size_t n_bins() const { return power.cols(); }
};

inline void validate(const StftConfig& cfg) {
  if (cfg.win_len == 0 || cfg.hop == 0 || cfg.n_fft < cfg.win_len || !(cfg.sample_rate_hz > 0))
    fail(Errc::InvalidConfig, "STFT needs 0 < win_len <= n_fft, hop > 0, fs > 0");
}

/// Power spectrogram of Hamming-windowed frames zero-padded to n_fft. A final
/// partial frame is dropped.
inline Spectrogram stft(std::span<const double> x, const StftConfig& cfg = {}) {
  validate(cfg);
  if (x.size() < cfg.win_len)
    fail(Errc::SignalShorterThanWindow,
         std::to_string(x.size()) + " samples < window " + std::to_string(cfg.win_len));
  const std::size_t frames = stft_frame_count(x.size(), cfg);
  const std::size_t bins = cfg.n_fft / 2 + 1;
  const auto window = hamming_window(cfg.win_len);
  const Fft fft(cfg.n_fft);

  Spectrogram spec;
  spec.config = cfg;
  spec.power = Matrix<double>(frames, bins);
  spec.bin_freqs_hz.resize(bins);
  for (std::size_t k = 0; k < bins; ++k)
    spec.bin_freqs_hz[k] = static_cast<double>(k) * cfg.sample_rate_hz / static_cast<double>(cfg.n_fft);
  spec.frame_times_s.resize(frames);

  std::vector<std::complex<double>> buf(cfg.n_fft);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * cfg.hop;
    spec.frame_times_s[f] = static_cast<double>(start) / cfg.sample_rate_hz;
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t i = 0; i < cfg.win_len; ++i) buf[i] = x[start + i] * window[i];
    fft.forward(buf);
    auto row = spec.power.row(f);
    for (std::size_t k = 0; k < bins; ++k) row[k] = std::norm(buf[k]);
  }
  return spec;
}

/// Band-pass then z-score: the preprocessing applied to every recording.
inline std::vector<double> preprocess(std::span<const double> x, const FilterCoefficients& coeffs) {
  return zscore_normalize(filter_signal(coeffs, x));
}

}  // namespace pcgscreen
