#pragma once

// MFCC front end: mel filterbank, log energies, orthonormal DCT-II, deltas,
// plus the MFC1 binary cache format.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pcgscreen/audio_io.hpp"
#include "pcgscreen/common.hpp"
#include "pcgscreen/dsp.hpp"

namespace pcgscreen {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct MelConfig {
  std::size_t n_filters = 26;
  double f_min_hz = 25.0;
  double f_max_hz = 400.0;
  std::size_t n_fft = 1024;
  double sample_rate_hz = 4000.0;
};

struct MelFilterBank {
  Matrix<double> weights;  // n_filters x (n_fft/2 + 1)
  std::vector<double> center_freqs_hz;
  std::vector<double> edge_freqs_hz;  // n_filters + 2 points
  std::vector<std::size_t> first_bin, last_bin;  // nonzero support per filter, inclusive
  MelConfig config;
};

/// Triangular filters on the HTK mel scale. n_filters + 2 points are spaced
/// evenly in mel over [f_min, f_max]; filter i rises from point i to point
/// i + 1 and falls to point i + 2. Each triangle is sampled at the FFT bin
/// frequencies and then scaled so its largest weight is exactly 1.
inline MelFilterBank build_mel_filterbank(const MelConfig& cfg = {}) {
  if (cfg.n_filters < 2) fail(Errc::InvalidConfig, "need at least 2 mel filters");
  if (!(cfg.f_min_hz >= 0.0 && cfg.f_min_hz < cfg.f_max_hz && cfg.f_max_hz <= cfg.sample_rate_hz / 2.0))
    fail(Errc::InvalidConfig, "need 0 <= f_min < f_max <= fs/2");
  if (cfg.n_fft < 2) fail(Errc::InvalidConfig, "n_fft too small");

  const std::size_t bins = cfg.n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.f_min_hz), mel_hi = hz_to_mel(cfg.f_max_hz);
  const double step = (mel_hi - mel_lo) / static_cast<double>(cfg.n_filters + 1);

  MelFilterBank fb;
  fb.config = cfg;
  fb.edge_freqs_hz.resize(cfg.n_filters + 2);
  for (std::size_t i = 0; i < cfg.n_filters + 2; ++i)
    fb.edge_freqs_hz[i] = mel_to_hz(mel_lo + step * static_cast<double>(i));
  fb.edge_freqs_hz.front() = cfg.f_min_hz;
  fb.edge_freqs_hz.back() = cfg.f_max_hz;

  fb.weights = Matrix<double>(cfg.n_filters, bins);
  fb.center_freqs_hz.resize(cfg.n_filters);
  fb.first_bin.assign(cfg.n_filters, bins);
  fb.last_bin.assign(cfg.n_filters, 0);
  for (std::size_t m = 0; m < cfg.n_filters; ++m) {
    const double left = fb.edge_freqs_hz[m], centre = fb.edge_freqs_hz[m + 1],
                 right = fb.edge_freqs_hz[m + 2];
    fb.center_freqs_hz[m] = centre;
    double peak = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate_hz / static_cast<double>(cfg.n_fft);
      double w = 0.0;
      if (f > left && f <= centre) w = (f - left) / (centre - left);
      else if (f > centre && f < right) w = (right - f) / (right - centre);
      fb.weights(m, k) = w;
      peak = std::max(peak, w);
    }
    if (peak <= 0.0)
      fail(Errc::BandTooNarrow, "mel filter " + std::to_string(m) + " covers no FFT bin");
    for (std::size_t k = 0; k < bins; ++k) {
      auto& w = fb.weights(m, k);
      if (w > 0.0) {
        w /= peak;
        fb.first_bin[m] = std::min(fb.first_bin[m], k);
        fb.last_bin[m] = k;
      }
    }
    if (m > 0 && fb.first_bin[m] == fb.first_bin[m - 1] && fb.last_bin[m] == fb.last_bin[m - 1])
      fail(Errc::BandTooNarrow,
           "mel filters " + std::to_string(m - 1) + " and " + std::to_string(m) + " share all bins");
  }
  return fb;
}

struct MfccConfig {
  StftConfig stft{};
  std::size_t n_filters = 26;
  double f_min_hz = 25.0;
  double f_max_hz = 400.0;
  std::size_t n_coeffs = 13;
  bool keep_c0 = true;  // false returns c1..c13 instead of c0..c12
  double log_floor = 1e-10;
  std::size_t delta_window = 2;

  MelConfig mel() const { return {n_filters, f_min_hz, f_max_hz, stft.n_fft, stft.sample_rate_hz}; }
  std::size_t stacked_rows() const { return 3 * n_coeffs; }
};

inline void validate(const MfccConfig& cfg) {
  validate(cfg.stft);
  if (cfg.n_coeffs == 0 || cfg.n_coeffs + (cfg.keep_c0 ? 0 : 1) > cfg.n_filters)
    fail(Errc::InvalidConfig, "n_coeffs must fit within the number of mel filters");
  if (!(cfg.log_floor > 0.0)) fail(Errc::InvalidConfig, "log floor must be positive");
  if (cfg.delta_window == 0) fail(Errc::InvalidConfig, "delta window must be >= 1");
}

/// Orthonormal DCT-II basis, rows k = 0..n_out-1 over n_in inputs.
inline Matrix<double> dct2_basis(std::size_t n_out, std::size_t n_in) {
  Matrix<double> basis(n_out, n_in);
  const double n = static_cast<double>(n_in);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t m = 0; m < n_in; ++m)
      basis(k, m) = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                     (static_cast<double>(m) + 0.5) / n);
  }
  return basis;
}

inline std::vector<double> dct2(std::span<const double> x) {
  const auto basis = dct2_basis(x.size(), x.size());
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k)
    for (std::size_t m = 0; m < x.size(); ++m) y[k] += basis(k, m) * x[m];
  return y;
}

/// Inverse of the orthonormal DCT-II (its transpose).
inline std::vector<double> idct2(std::span<const double> y) {
  const auto basis = dct2_basis(y.size(), y.size());
  std::vector<double> x(y.size(), 0.0);
  for (std::size_t k = 0; k < y.size(); ++k)
    for (std::size_t m = 0; m < y.size(); ++m) x[m] += basis(k, m) * y[k];
  return x;
}

/// Static MFCCs (n_coeffs x n_frames) from an existing power spectrogram.
inline Matrix<double> mfcc_from_spectrogram(const Spectrogram& spec, const MelFilterBank& fb,
                                            const MfccConfig& cfg) {
  if (fb.weights.cols() != spec.n_bins())
    fail(Errc::ShapeMismatch, "filterbank bins do not match spectrogram bins");
  const std::size_t n_filt = fb.weights.rows();
  const std::size_t first = cfg.keep_c0 ? 0 : 1;
  const auto basis = dct2_basis(first + cfg.n_coeffs, n_filt);

  Matrix<double> out(cfg.n_coeffs, spec.n_frames());
  std::vector<double> log_e(n_filt);
  for (std::size_t t = 0; t < spec.n_frames(); ++t) {
    const auto p = spec.power.row(t);
    for (std::size_t m = 0; m < n_filt; ++m) {
      double e = 0.0;
      const auto w = fb.weights.row(m);
      for (std::size_t k = fb.first_bin[m]; k <= fb.last_bin[m]; ++k) e += w[k] * p[k];
      log_e[m] = std::log(std::max(e, cfg.log_floor));
    }
    for (std::size_t c = 0; c < cfg.n_coeffs; ++c) {
      const auto b = basis.row(first + c);
      double acc = 0.0;
      for (std::size_t m = 0; m < n_filt; ++m) acc += b[m] * log_e[m];
      out(c, t) = acc;
    }
  }
  return out;
}

inline Matrix<double> compute_mfcc(std::span<const double> signal, const MfccConfig& cfg = {}) {
  validate(cfg);
  const auto spec = stft(signal, cfg.stft);
  return mfcc_from_spectrogram(spec, build_mel_filterbank(cfg.mel()), cfg);
}

/// Regression deltas along time (columns) with edge replication:
/// d_t = sum_{n=1..N} n (c_{t+n} - c_{t-n}) / (2 sum n^2).
inline Matrix<double> delta_features(const Matrix<double>& c, std::size_t window = 2) {
  if (window == 0) fail(Errc::InvalidArgument, "delta window must be >= 1");
  const std::size_t T = c.cols();
  Matrix<double> d(c.rows(), T, 0.0);
  if (T == 0) return d;
  double denom = 0.0;
  for (std::size_t n = 1; n <= window; ++n) denom += static_cast<double>(n * n);
  denom *= 2.0;
  const auto clamp_t = [T](std::ptrdiff_t t) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t, 0, static_cast<std::ptrdiff_t>(T) - 1));
  };
  for (std::size_t r = 0; r < c.rows(); ++r)
    for (std::size_t t = 0; t < T; ++t) {
      double acc = 0.0;
      for (std::size_t n = 1; n <= window; ++n) {
        const auto ti = static_cast<std::ptrdiff_t>(t), ni = static_cast<std::ptrdiff_t>(n);
        acc += static_cast<double>(n) * (c(r, clamp_t(ti + ni)) - c(r, clamp_t(ti - ni)));
      }
      d(r, t) = acc / denom;
    }
  return d;
}

/// Static, delta and delta-delta rows stacked (3 * n_coeffs x T).
inline Matrix<double> stack_with_deltas(const Matrix<double>& stat, std::size_t window) {
  const auto d1 = delta_features(stat, window);
  const auto d2 = delta_features(d1, window);
  Matrix<double> out(3 * stat.rows(), stat.cols());
  for (std::size_t r = 0; r < stat.rows(); ++r) {
    std::copy(stat.row(r).begin(), stat.row(r).end(), out.row(r).begin());
    std::copy(d1.row(r).begin(), d1.row(r).end(), out.row(stat.rows() + r).begin());
    std::copy(d2.row(r).begin(), d2.row(r).end(), out.row(2 * stat.rows() + r).begin());
  }
  return out;
}

inline Matrix<double> full_mfcc_stack(std::span<const double> signal, const MfccConfig& cfg = {}) {
  return stack_with_deltas(compute_mfcc(signal, cfg), cfg.delta_window);
}

// ---------------------------------------------------------------------------
// MFC1 cache: "MFC1", u32 rows, u32 cols, u32 reserved = 0, row-major f32 (all LE).
// ---------------------------------------------------------------------------

inline std::string encode_mfc1(const Matrix<double>& m) {
  std::string out = "MFC1";
  out.reserve(16 + 4 * m.data().size());
  le::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  le::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  le::put_u32(out, 0);
  for (double v : m.data()) le::put_f32(out, static_cast<float>(v));
  return out;
}

inline Matrix<float> decode_mfc1(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 4) != "MFC1") fail(Errc::CorruptHeader, "bad MFC1 magic");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t rows = le::get_u32(p + 4), cols = le::get_u32(p + 8);
  if (le::get_u32(p + 12) != 0) fail(Errc::CorruptHeader, "MFC1 reserved field is nonzero");
  if (bytes.size() != 16 + 4 * rows * cols) fail(Errc::CorruptHeader, "MFC1 payload size mismatch");
  Matrix<float> m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) m.data()[i] = le::get_f32(p + 16 + 4 * i);
  return m;
}

inline void write_mfc1(const Matrix<double>& m, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_mfc1(m));
}

inline Matrix<float> read_mfc1(const std::filesystem::path& path) {
  return decode_mfc1(detail::read_file_bytes(path));
}

}  // namespace pcgscreen
