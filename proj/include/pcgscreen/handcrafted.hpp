#pragma once

// Handcrafted features: beat detection, HRV statistics, and band-limited
// spectral shape descriptors.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcgscreen/audio_io.hpp"
#include "pcgscreen/common.hpp"
#include "pcgscreen/dsp.hpp"

namespace pcgscreen {

// ---------------------------------------------------------------------------
// Beat detection
// ---------------------------------------------------------------------------

struct HeartRateBand {
  double min_bpm;
  double max_bpm;
};

struct AgeHeartRatePriors {
  int infant_max_months = 24;
  int child_max_months = 144;
  HeartRateBand infant{100.0, 180.0};
  HeartRateBand child{70.0, 140.0};
  HeartRateBand adolescent{60.0, 120.0};

  HeartRateBand for_age(int age_months) const {
    if (age_months <= infant_max_months) return infant;
    if (age_months <= child_max_months) return child;
    return adolescent;
  }
};

struct BeatDetectConfig {
  double smooth_ms = 50.0;          // moving-average width of the Shannon envelope
  double min_separation = 0.5;      // fraction of the estimated period
  double peak_rel_threshold = 0.25; // peaks below this fraction of the median beat height are dropped
  double peak_abs_threshold = 0.05; // ... or below this fraction of the envelope maximum
  std::size_t decimation = 20;      // envelope decimation for the autocorrelation
  double min_duration_s = 2.0;
  AgeHeartRatePriors priors{};
};

struct BeatTimes {
  std::vector<double> times_s;
  double estimated_hr_bpm = 0.0;
  double method_confidence = 0.0;
};

/// Shannon energy envelope, -x^2 ln x^2 on peak-normalized samples, smoothed
/// by a centred moving average of odd width.
inline std::vector<double> shannon_envelope(std::span<const double> x, std::size_t width) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  std::vector<double> se(x.size(), 0.0);
  if (peak == 0.0) return se;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double y = (x[i] / peak) * (x[i] / peak);
    se[i] = y > 0.0 ? -y * std::log(y) : 0.0;
  }
  width = std::max<std::size_t>(1, width | 1u);
  const std::size_t half = width / 2;
  std::vector<double> prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + se[i];
  std::vector<double> env(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(x.size(), i + half + 1);
    env[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return env;
}

/// S1-like beat times from a preprocessed (filtered, z-scored) PCG signal.
///
/// The dominant period comes from the autocorrelation of the decimated
/// envelope, searched only over lags allowed by the age band's heart-rate
/// range. Envelope maxima are then accepted greedily by height with a minimum
/// spacing of min_separation * period, which keeps one peak per cycle.
inline BeatTimes detect_beats(std::span<const double> x, double fs_hz, int age_months,
                              const BeatDetectConfig& cfg = {}) {
  if (static_cast<double>(x.size()) < cfg.min_duration_s * fs_hz)
    fail(Errc::SignalTooShort, "beat detection needs at least " + std::to_string(cfg.min_duration_s) + " s");

  const auto width = static_cast<std::size_t>(std::lround(cfg.smooth_ms * 1e-3 * fs_hz));
  const auto env = shannon_envelope(x, width);
  const double env_max = *std::max_element(env.begin(), env.end());
  if (!(env_max > 0.0)) fail(Errc::NoBeatsDetected, "silent signal");

  // Period from the decimated envelope's autocorrelation.
  const std::size_t dec = std::max<std::size_t>(1, cfg.decimation);
  const double fs_dec = fs_hz / static_cast<double>(dec);
  std::vector<double> e(env.size() / dec, 0.0);
  for (std::size_t i = 0; i < e.size(); ++i) {
    for (std::size_t j = 0; j < dec; ++j) e[i] += env[i * dec + j];
    e[i] /= static_cast<double>(dec);
  }
  const double e_mean = mean_of(e);
  for (double& v : e) v -= e_mean;
  const auto band = cfg.priors.for_age(age_months);
  const auto lag_min = static_cast<std::size_t>(std::floor(60.0 / band.max_bpm * fs_dec));
  const auto lag_max = std::min(e.size() / 2, static_cast<std::size_t>(std::ceil(60.0 / band.min_bpm * fs_dec)));
  if (lag_min < 1 || lag_max <= lag_min) fail(Errc::SignalTooShort, "too short for the heart-rate band");

  double r0 = 0.0;
  for (double v : e) r0 += v * v;
  r0 /= static_cast<double>(e.size());
  if (!(r0 > 0.0)) fail(Errc::NoBeatsDetected, "flat envelope");
  std::vector<double> r(lag_max + 2, 0.0);
  for (std::size_t lag = lag_min - 1; lag <= lag_max + 1 && lag < e.size(); ++lag) {
    double acc = 0.0;
    for (std::size_t i = 0; i + lag < e.size(); ++i) acc += e[i] * e[i + lag];
    r[lag] = acc / static_cast<double>(e.size() - lag);
  }
  std::size_t best = lag_min;
  for (std::size_t lag = lag_min; lag <= lag_max; ++lag)
    if (r[lag] > r[best]) best = lag;
  double lag_est = static_cast<double>(best);
  if (best > lag_min && best < lag_max) {
    const double a = r[best - 1], b = r[best], c = r[best + 1];
    const double denom = a - 2.0 * b + c;
    if (denom < 0.0) lag_est += std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
  }
  const double period_s = lag_est / fs_dec;

  // Greedy peak picking on the full-rate envelope.
  std::vector<std::size_t> cand;
  for (std::size_t i = 1; i + 1 < env.size(); ++i)
    if (env[i] > env[i - 1] && env[i] >= env[i + 1]) cand.push_back(i);
  std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) { return env[a] > env[b]; });
  const double min_sep = cfg.min_separation * period_s * fs_hz;
  std::vector<std::size_t> accepted;
  for (std::size_t c : cand) {
    bool ok = true;
    for (std::size_t a : accepted)
      if (std::abs(static_cast<double>(c) - static_cast<double>(a)) < min_sep) {
        ok = false;
        break;
      }
    if (ok) accepted.push_back(c);
  }
  if (!accepted.empty()) {
    std::vector<double> heights;
    for (std::size_t a : accepted) heights.push_back(env[a]);
    std::nth_element(heights.begin(), heights.begin() + static_cast<std::ptrdiff_t>(heights.size() / 2), heights.end());
    const double cutoff = std::max(cfg.peak_rel_threshold * heights[heights.size() / 2],
                                   cfg.peak_abs_threshold * env_max);
    std::erase_if(accepted, [&](std::size_t a) { return env[a] < cutoff; });
  }
  std::sort(accepted.begin(), accepted.end());
  if (accepted.size() < 3)
    fail(Errc::NoBeatsDetected, std::to_string(accepted.size()) + " peaks found");

  BeatTimes bt;
  bt.estimated_hr_bpm = 60.0 / period_s;
  bt.method_confidence = std::clamp(r[best] / r0, 0.0, 1.0);
  // The Shannon envelope of a clean burst is flat-topped (it dips where |x| is
  // largest), so the argmax wanders; report the centroid of the above-half-height
  // lobe around each peak instead.
  const auto reach = static_cast<std::size_t>(std::max(1.0, 0.25 * period_s * fs_hz));
  for (std::size_t a : accepted) {
    const double half_h = 0.5 * env[a];
    std::size_t lo = a, hi = a;
    while (lo > 0 && a - lo < reach && env[lo - 1] >= half_h) --lo;
    while (hi + 1 < env.size() && hi - a < reach && env[hi + 1] >= half_h) ++hi;
    double w = 0.0, wt = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) {
      w += env[i] - half_h;
      wt += (env[i] - half_h) * static_cast<double>(i);
    }
    bt.times_s.push_back((w > 0.0 ? wt / w : static_cast<double>(a)) / fs_hz);
  }
  return bt;
}

// ---------------------------------------------------------------------------
// HRV
// ---------------------------------------------------------------------------

struct HrvMetrics {
  double mean_nn_ms = 0;
  double sdnn_ms = 0;
  double rmssd_ms = 0;
  double nn50_count = 0;
  double pnn50_pct = 0;
  double min_rr_ms = 0;
  double max_rr_ms = 0;
  double triangular_index = 0;
};

inline constexpr double kTriangularBinMs = 7.8125;  // 1/128 s

/// HRV statistics over NN intervals in milliseconds (at least 2 intervals).
inline HrvMetrics hrv_from_intervals(std::span<const double> nn) {
  if (nn.size() < 2) fail(Errc::TooFewBeats, "HRV needs at least 2 intervals");
  HrvMetrics h;
  h.mean_nn_ms = mean_of(nn);
  h.sdnn_ms = sample_stddev(nn);
  double sq = 0.0;
  std::size_t nn50 = 0;
  for (std::size_t i = 1; i < nn.size(); ++i) {
    const double d = nn[i] - nn[i - 1];
    sq += d * d;
    if (std::abs(d) > 50.0) ++nn50;
  }
  const auto n_diff = static_cast<double>(nn.size() - 1);
  h.rmssd_ms = std::sqrt(sq / n_diff);
  h.nn50_count = static_cast<double>(nn50);
  h.pnn50_pct = 100.0 * h.nn50_count / n_diff;
  h.min_rr_ms = *std::min_element(nn.begin(), nn.end());
  h.max_rr_ms = *std::max_element(nn.begin(), nn.end());
  std::map<long long, std::size_t> hist;
  std::size_t peak = 0;
  for (double v : nn) peak = std::max(peak, ++hist[static_cast<long long>(std::floor(v / kTriangularBinMs))]);
  h.triangular_index = static_cast<double>(nn.size()) / static_cast<double>(peak);
  return h;
}

inline std::vector<double> nn_intervals_ms(std::span<const double> times_s) {
  std::vector<double> nn;
  for (std::size_t i = 1; i < times_s.size(); ++i) nn.push_back((times_s[i] - times_s[i - 1]) * 1000.0);
  return nn;
}

inline HrvMetrics compute_hrv(const BeatTimes& beats) {
  if (beats.times_s.size() < 3) fail(Errc::TooFewBeats, std::to_string(beats.times_s.size()) + " beats");
  return hrv_from_intervals(nn_intervals_ms(beats.times_s));
}

// ---------------------------------------------------------------------------
// Spectral shape
// ---------------------------------------------------------------------------

struct SpectralConfig {
  double band_lo_hz = 25.0;
  double band_hi_hz = 400.0;
  double rolloff_pct = 0.85;
  std::size_t contrast_bands = 4;
  double contrast_quantile = 0.2;
  double log_floor = 1e-10;
};

namespace detail {

inline std::pair<std::size_t, std::size_t> band_bins(const Spectrogram& spec, double lo, double hi) {
  std::size_t first = spec.n_bins(), last = 0;
  for (std::size_t k = 0; k < spec.n_bins(); ++k)
    if (spec.bin_freqs_hz[k] >= lo && spec.bin_freqs_hz[k] <= hi) {
      first = std::min(first, k);
      last = k;
    }
  if (first > last) fail(Errc::BandTooNarrow, "no bins inside the analysis band");
  return {first, last};
}

/// Applies per_frame to every frame with positive in-band power and averages.
template <typename F>
double mean_over_powered_frames(const Spectrogram& spec, const SpectralConfig& cfg, F&& per_frame) {
  const auto [first, last] = band_bins(spec, cfg.band_lo_hz, cfg.band_hi_hz);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t t = 0; t < spec.n_frames(); ++t) {
    const auto p = spec.power.row(t);
    double total = 0.0;
    for (std::size_t k = first; k <= last; ++k) total += p[k];
    if (!(total > 0.0)) continue;
    sum += per_frame(p, first, last, total);
    ++used;
  }
  if (used == 0) fail(Errc::ZeroPower, "no in-band power");
  return sum / static_cast<double>(used);
}

}  // namespace detail

/// Mean over frames of the power-weighted mean in-band frequency.
inline double spectral_centroid(const Spectrogram& spec, const SpectralConfig& cfg = {}) {
  return detail::mean_over_powered_frames(
      spec, cfg, [&](std::span<const double> p, std::size_t first, std::size_t last, double total) {
        double num = 0.0;
        for (std::size_t k = first; k <= last; ++k) num += spec.bin_freqs_hz[k] * p[k];
        return num / total;
      });
}

/// Mean over frames of the lowest in-band frequency holding pct of the in-band power.
inline double spectral_rolloff(const Spectrogram& spec, double pct, const SpectralConfig& cfg = {}) {
  if (!(pct > 0.0 && pct < 1.0)) fail(Errc::InvalidArgument, "roll-off percentage must be in (0, 1)");
  return detail::mean_over_powered_frames(
      spec, cfg, [&](std::span<const double> p, std::size_t first, std::size_t last, double total) {
        double cum = 0.0;
        for (std::size_t k = first; k <= last; ++k) {
          cum += p[k];
          if (cum >= pct * total) return spec.bin_freqs_hz[k];
        }
        return spec.bin_freqs_hz[last];
      });
}

/// Log-ratio of the mean of the loudest to the quietest `quantile` of bins in
/// each of n_bands log-spaced sub-bands, averaged over bands and frames.
inline double spectral_contrast(const Spectrogram& spec, std::size_t n_bands, const SpectralConfig& cfg = {}) {
  if (n_bands == 0) fail(Errc::InvalidArgument, "need at least one contrast band");
  std::vector<std::pair<std::size_t, std::size_t>> bands;
  const double ratio = cfg.band_hi_hz / cfg.band_lo_hz;
  for (std::size_t b = 0; b < n_bands; ++b) {
    const double lo = cfg.band_lo_hz * std::pow(ratio, static_cast<double>(b) / static_cast<double>(n_bands));
    const double hi = cfg.band_lo_hz * std::pow(ratio, static_cast<double>(b + 1) / static_cast<double>(n_bands));
    std::size_t first = spec.n_bins(), last = 0;
    for (std::size_t k = 0; k < spec.n_bins(); ++k) {
      const double f = spec.bin_freqs_hz[k];
      const bool inside = f >= lo && (b + 1 == n_bands ? f <= hi : f < hi);
      if (inside) {
        first = std::min(first, k);
        last = k;
      }
    }
    if (first > last || last - first + 1 < 2)
      fail(Errc::BandTooNarrow, "contrast band " + std::to_string(b) + " holds fewer than 2 bins");
    bands.emplace_back(first, last);
  }
  std::vector<double> sorted;
  return detail::mean_over_powered_frames(
      spec, cfg, [&](std::span<const double> p, std::size_t, std::size_t, double) {
        double acc = 0.0;
        for (const auto& [first, last] : bands) {
          sorted.assign(p.begin() + static_cast<std::ptrdiff_t>(first), p.begin() + static_cast<std::ptrdiff_t>(last) + 1);
          std::sort(sorted.begin(), sorted.end());
          const auto k = std::max<std::size_t>(
              1, static_cast<std::size_t>(std::lround(cfg.contrast_quantile * static_cast<double>(sorted.size()))));
          double lo = 0.0, hi = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            lo += sorted[i];
            hi += sorted[sorted.size() - 1 - i];
          }
          lo /= static_cast<double>(k);
          hi /= static_cast<double>(k);
          acc += std::log(std::max(hi, cfg.log_floor)) - std::log(std::max(lo, cfg.log_floor));
        }
        return acc / static_cast<double>(bands.size());
      });
}

// ---------------------------------------------------------------------------
// The 11-feature vector
// ---------------------------------------------------------------------------

inline constexpr std::size_t kHandcraftedDim = 11;
inline constexpr std::size_t kHrvDim = 8;

inline constexpr std::array<std::string_view, kHandcraftedDim> kHandcraftedNames = {
    "mean_nn_ms",         "sdnn_ms",           "rmssd_ms",
    "nn50_count",         "pnn50_pct",         "min_rr_ms",
    "max_rr_ms",          "hrv_triangular_index", "spectral_centroid_hz",
    "spectral_rolloff_hz", "spectral_contrast_nats"};

using HandcraftedVector = std::array<double, kHandcraftedDim>;

struct HandcraftedResult {
  HandcraftedVector values{};
  bool quality_flag = false;  // true when beat detection failed and HRV entries were imputed
};

struct HandcraftedConfig {
  BeatDetectConfig beats{};
  SpectralConfig spectral{};
};

/// HRV entries default to NaN on detection failure unless imputation medians are given.
inline HandcraftedResult extract_handcrafted(std::span<const double> preprocessed, const Spectrogram& spec,
                                             double fs_hz, int age_months, const HandcraftedConfig& cfg = {},
                                             const std::optional<std::array<double, kHrvDim>>& hrv_medians = {}) {
  HandcraftedResult out;
  try {
    const auto h = compute_hrv(detect_beats(preprocessed, fs_hz, age_months, cfg.beats));
    out.values = {h.mean_nn_ms, h.sdnn_ms, h.rmssd_ms, h.nn50_count,
                  h.pnn50_pct,  h.min_rr_ms, h.max_rr_ms, h.triangular_index};
  } catch (const Error& e) {
    if (e.code() != Errc::NoBeatsDetected && e.code() != Errc::TooFewBeats) throw;
    out.quality_flag = true;
    for (std::size_t i = 0; i < kHrvDim; ++i)
      out.values[i] = hrv_medians ? (*hrv_medians)[i] : std::numeric_limits<double>::quiet_NaN();
  }
  out.values[8] = spectral_centroid(spec, cfg.spectral);
  out.values[9] = spectral_rolloff(spec, cfg.spectral.rolloff_pct, cfg.spectral);
  out.values[10] = spectral_contrast(spec, cfg.spectral.contrast_bands, cfg.spectral);
  return out;
}

inline HandcraftedResult extract_handcrafted(const Recording& preprocessed, int age_months,
                                             const StftConfig& stft_cfg = {}, const HandcraftedConfig& cfg = {}) {
  StftConfig sc = stft_cfg;
  sc.sample_rate_hz = preprocessed.sample_rate_hz;
  return extract_handcrafted(preprocessed.samples, stft(preprocessed.samples, sc),
                             preprocessed.sample_rate_hz, age_months, cfg);
}

}  // namespace pcgscreen
