#pragma once

// Seeded synthetic PCG cohort. Each recording carries periodic S1/S2 tone
// bursts; CHD patients add a band-limited systolic murmur. Everything is a
// deterministic function of (config, seed).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcgscreen/audio_io.hpp"
#include "pcgscreen/common.hpp"
#include "pcgscreen/dsp.hpp"
#include "pcgscreen/random.hpp"

namespace pcgscreen {

enum class AgeGroup { Infant, Child, Adolescent };

constexpr std::string_view age_group_name(AgeGroup g) {
  switch (g) {
    case AgeGroup::Infant: return "infant";
    case AgeGroup::Child: return "child";
    case AgeGroup::Adolescent: return "adolescent";
  }
  return "?";
}

struct SynthConfig {
  std::size_t n_patients = 200;
  double chd_ratio = 0.6;
  std::array<double, 3> age_weights{0.4, 0.4, 0.2};  // infant, child, adolescent
  double snr_db_min = 10.0;
  double snr_db_max = 20.0;
  double duration_s = 15.0;
  int sample_rate_hz = 4000;
  double jitter_min = 0.02;  // RR jitter as a fraction of the mean interval
  double jitter_max = 0.05;
  double murmur_amp_min = 0.2;  // relative to the S1 peak, before site scaling
  double murmur_amp_max = 0.5;
  double murmur_scale = 1.0;  // 0 gives a negative-control cohort
  std::array<double, 4> site_murmur_gain{0.9, 1.0, 0.7, 0.8};  // AV, PV, TV, MV
  double peak = 0.9;
  std::uint64_t seed = 42;
};

inline void validate(const SynthConfig& c) {
  if (c.n_patients < 2) fail(Errc::InvalidConfig, "n_patients must be >= 2");
  if (!(c.chd_ratio > 0.0 && c.chd_ratio < 1.0)) fail(Errc::InvalidConfig, "chd_ratio must be in (0, 1)");
  if (!(c.snr_db_min <= c.snr_db_max)) fail(Errc::InvalidConfig, "snr range is empty");
  if (!(c.duration_s >= 2.0) || c.sample_rate_hz <= 1000) fail(Errc::InvalidConfig, "duration/rate too small");
  if (!(c.jitter_min >= 0 && c.jitter_min <= c.jitter_max && c.jitter_max < 0.5))
    fail(Errc::InvalidConfig, "jitter range invalid");
  if (!(c.murmur_amp_min >= 0 && c.murmur_amp_min <= c.murmur_amp_max && c.murmur_scale >= 0))
    fail(Errc::InvalidConfig, "murmur amplitude range invalid");
  if (!(c.peak > 0 && c.peak <= 1)) fail(Errc::InvalidConfig, "peak must be in (0, 1]");
  double w = 0;
  for (double a : c.age_weights) {
    if (a < 0) fail(Errc::InvalidConfig, "age weights must be nonnegative");
    w += a;
  }
  if (!(w > 0)) fail(Errc::InvalidConfig, "age weights sum to zero");
}

struct RecordingTruth {
  std::vector<double> beat_times_s;   // S1 onsets
  std::vector<double> s2_times_s;     // S2 onsets
  double murmur_amp = 0.0;            // after site scaling
  double snr_db = 0.0;
};

struct PatientTruth {
  std::string patient_id;
  Label label = Label::NonCHD;
  AgeGroup age_group = AgeGroup::Child;
  int age_months = 0;
  Sex sex = Sex::Unknown;
  double hr_bpm = 0.0;
  double murmur_amp = 0.0;  // patient-level, before site scaling
  std::map<Site, RecordingTruth> recordings;
};

struct SynthPatient {
  std::array<Recording, 4> recordings;  // kAllSites order
  PatientTruth truth;
};

namespace detail {

inline std::pair<int, int> age_range_months(AgeGroup g) {
  switch (g) {
    case AgeGroup::Infant: return {1, 24};
    case AgeGroup::Child: return {25, 144};
    case AgeGroup::Adolescent: return {145, 216};
  }
  return {25, 144};
}

// Resting rates kept inside the detector's age-band priors.
inline std::pair<double, double> hr_range_bpm(AgeGroup g) {
  switch (g) {
    case AgeGroup::Infant: return {110.0, 150.0};
    case AgeGroup::Child: return {80.0, 120.0};
    case AgeGroup::Adolescent: return {65.0, 100.0};
  }
  return {80.0, 120.0};
}

/// Adds a decaying tone burst starting at sample `start`.
inline void add_burst(std::vector<double>& x, double fs, double t0, double freq, double amp, double tau_s,
                      double len_s, double phase) {
  const auto start = static_cast<std::ptrdiff_t>(std::ceil(t0 * fs));
  const auto len = static_cast<std::ptrdiff_t>(len_s * fs);
  const double attack = 0.01;  // 10 ms raised-cosine onset
  for (std::ptrdiff_t i = 0; i < len; ++i) {
    const std::ptrdiff_t n = start + i;
    if (n < 0 || n >= static_cast<std::ptrdiff_t>(x.size())) continue;
    const double t = static_cast<double>(i) / fs;
    const double ramp = t < attack ? 0.5 - 0.5 * std::cos(std::numbers::pi * t / attack) : 1.0;
    x[static_cast<std::size_t>(n)] +=
        amp * ramp * std::exp(-t / tau_s) * std::sin(2.0 * std::numbers::pi * freq * t + phase);
  }
}

inline double mean_square(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v * v;
  return x.empty() ? 0.0 : s / static_cast<double>(x.size());
}

}  // namespace detail

/// Builds the four site recordings for one patient. Only CHD patients get a
/// murmur; every other draw is label independent.
inline SynthPatient generate_patient(const std::string& patient_id, Label label, AgeGroup group,
                                     std::uint64_t seed, const SynthConfig& cfg = {}) {
  validate(cfg);
  Rng rng(seed);
  SynthPatient out;
  auto& truth = out.truth;
  truth.patient_id = patient_id;
  truth.label = label;
  truth.age_group = group;
  const auto [age_lo, age_hi] = detail::age_range_months(group);
  truth.age_months = age_lo + static_cast<int>(rng.index(static_cast<std::uint64_t>(age_hi - age_lo + 1)));
  truth.sex = rng.uniform() < 0.5 ? Sex::M : Sex::F;
  const auto [hr_lo, hr_hi] = detail::hr_range_bpm(group);
  truth.hr_bpm = rng.uniform(hr_lo, hr_hi);
  // Drawn for every patient so both classes consume the same random stream.
  const double amp_draw = rng.uniform(cfg.murmur_amp_min, cfg.murmur_amp_max);
  truth.murmur_amp = label == Label::CHD ? amp_draw * cfg.murmur_scale : 0.0;
  const double s1_freq = rng.uniform(40.0, 70.0);
  const double s2_freq = rng.uniform(60.0, 110.0);

  const double fs = cfg.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * fs));
  const double rr = 60.0 / truth.hr_bpm;
  const double systole = 0.08 + 0.3 * rr;  // S1 onset to S2 onset
  const auto murmur_filter = design_butterworth_bandpass(4, 120.0, 350.0, fs);

  for (std::size_t si = 0; si < kAllSites.size(); ++si) {
    const Site site = kAllSites[si];
    Rng r(derive_seed(seed, si + 1));
    RecordingTruth rt;

    // Beat times with zero-mean relative jitter, so the mean interval is exactly rr.
    const double jitter = r.uniform(cfg.jitter_min, cfg.jitter_max);
    const double first = r.uniform(0.05, 0.05 + rr);
    const auto n_beats = static_cast<std::size_t>(std::floor((cfg.duration_s - first) / rr)) + 1;
    std::vector<double> dev(n_beats > 1 ? n_beats - 1 : 0);
    for (auto& d : dev) d = r.uniform(-jitter, jitter);
    const double dmean = dev.empty() ? 0.0 : std::accumulate(dev.begin(), dev.end(), 0.0) / static_cast<double>(dev.size());
    double t = first;
    for (std::size_t b = 0; b < n_beats; ++b) {
      if (t >= cfg.duration_s) break;
      rt.beat_times_s.push_back(t);
      if (b < dev.size()) t += rr * (1.0 + dev[b] - dmean);
    }

    std::vector<double> heart(n, 0.0);
    for (double tb : rt.beat_times_s) {
      const double a1 = r.uniform(0.9, 1.1), a2 = r.uniform(0.5, 0.7);
      detail::add_burst(heart, fs, tb, s1_freq, a1, 0.025, 0.12, r.uniform(0.0, 2.0 * std::numbers::pi));
      const double t2 = tb + systole;
      rt.s2_times_s.push_back(t2);
      detail::add_burst(heart, fs, t2, s2_freq, a2, 0.02, 0.10, r.uniform(0.0, 2.0 * std::numbers::pi));
    }

    // Systolic murmur: band-limited noise between the end of S1 and S2, with a
    // diamond envelope.
    std::vector<double> noise(n);
    for (auto& v : noise) v = r.normal();
    auto band = filter_signal(murmur_filter, noise);
    const double band_rms = std::sqrt(detail::mean_square(band));
    rt.murmur_amp = truth.murmur_amp * cfg.site_murmur_gain[si];
    if (rt.murmur_amp > 0) {
      for (double tb : rt.beat_times_s) {
        const double m0 = tb + 0.10, m1 = tb + systole - 0.01;
        const auto i0 = static_cast<std::size_t>(std::ceil(m0 * fs));
        const auto i1 = std::min(n, static_cast<std::size_t>(std::floor(m1 * fs)));
        for (std::size_t i = i0; i < i1; ++i) {
          const double u = (static_cast<double>(i) / fs - m0) / (m1 - m0);
          const double env = std::sin(std::numbers::pi * u);
          heart[i] += rt.murmur_amp * env * band[i] / band_rms;
        }
      }
    }

    // Background white noise at the sampled SNR.
    rt.snr_db = r.uniform(cfg.snr_db_min, cfg.snr_db_max);
    const double noise_rms = std::sqrt(detail::mean_square(heart) / std::pow(10.0, rt.snr_db / 10.0));
    for (auto& v : heart) v += noise_rms * r.normal();

    double peak = 0;
    for (double v : heart) peak = std::max(peak, std::abs(v));
    if (peak > 0)
      for (auto& v : heart) v *= cfg.peak / peak;

    Recording rec;
    rec.samples = std::move(heart);
    rec.sample_rate_hz = cfg.sample_rate_hz;
    rec.patient_id = patient_id;
    rec.site = site;
    out.recordings[si] = std::move(rec);
    truth.recordings[site] = std::move(rt);
  }
  return out;
}

inline nlohmann::json to_json(const PatientTruth& t) {
  nlohmann::json recs = nlohmann::json::object();
  for (const auto& [site, r] : t.recordings)
    recs[std::string(site_name(site))] = {{"beat_times_s", r.beat_times_s},
                                          {"s2_times_s", r.s2_times_s},
                                          {"murmur_amp", r.murmur_amp},
                                          {"snr_db", r.snr_db}};
  return {{"label", label_name(t.label)},
          {"age_group", age_group_name(t.age_group)},
          {"age_months", t.age_months},
          {"hr_bpm", t.hr_bpm},
          {"murmur_amp", t.murmur_amp},
          {"recordings", recs}};
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_patients", c.n_patients},       {"chd_ratio", c.chd_ratio},
          {"age_weights", c.age_weights},     {"snr_db_min", c.snr_db_min},
          {"snr_db_max", c.snr_db_max},       {"duration_s", c.duration_s},
          {"sample_rate_hz", c.sample_rate_hz}, {"jitter_min", c.jitter_min},
          {"jitter_max", c.jitter_max},       {"murmur_amp_min", c.murmur_amp_min},
          {"murmur_amp_max", c.murmur_amp_max}, {"murmur_scale", c.murmur_scale},
          {"site_murmur_gain", c.site_murmur_gain}, {"peak", c.peak},
          {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig c = {}) {
  c.n_patients = j.value("n_patients", c.n_patients);
  c.chd_ratio = j.value("chd_ratio", c.chd_ratio);
  c.age_weights = j.value("age_weights", c.age_weights);
  c.snr_db_min = j.value("snr_db_min", c.snr_db_min);
  c.snr_db_max = j.value("snr_db_max", c.snr_db_max);
  c.duration_s = j.value("duration_s", c.duration_s);
  c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
  c.jitter_min = j.value("jitter_min", c.jitter_min);
  c.jitter_max = j.value("jitter_max", c.jitter_max);
  c.murmur_amp_min = j.value("murmur_amp_min", c.murmur_amp_min);
  c.murmur_amp_max = j.value("murmur_amp_max", c.murmur_amp_max);
  c.murmur_scale = j.value("murmur_scale", c.murmur_scale);
  c.site_murmur_gain = j.value("site_murmur_gain", c.site_murmur_gain);
  c.peak = j.value("peak", c.peak);
  c.seed = j.value("seed", c.seed);
  return c;
}

struct SynthDataset {
  PatientManifest manifest;
  std::vector<PatientTruth> truth;
};

inline std::string synth_patient_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "P%04zu", i + 1);
  return buf;
}

/// round(n * chd_ratio) CHD patients, labels placed by a seeded shuffle.
inline std::vector<Label> synth_labels(const SynthConfig& cfg) {
  const auto n_chd = static_cast<std::size_t>(std::llround(static_cast<double>(cfg.n_patients) * cfg.chd_ratio));
  std::vector<Label> labels(cfg.n_patients, Label::NonCHD);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(n_chd, cfg.n_patients)), Label::CHD);
  Rng rng(derive_seed(cfg.seed, 0x6c61626cULL));
  rng.shuffle(std::span<Label>(labels));
  return labels;
}

inline AgeGroup draw_age_group(Rng& rng, const std::array<double, 3>& w) {
  const double total = w[0] + w[1] + w[2];
  const double u = rng.uniform() * total;
  if (u < w[0]) return AgeGroup::Infant;
  if (u < w[0] + w[1]) return AgeGroup::Child;
  return AgeGroup::Adolescent;
}

/// Writes wav/<id>_<site>.wav, manifest.csv and truth.json under out_dir.
inline SynthDataset generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  validate(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec) fail(Errc::IoFailure, "cannot create " + (out_dir / "wav").string() + ": " + ec.message());

  const auto labels = synth_labels(cfg);
  Rng age_rng(derive_seed(cfg.seed, 0x61676573ULL));
  SynthDataset ds;
  nlohmann::json patients = nlohmann::json::object();
  for (std::size_t i = 0; i < cfg.n_patients; ++i) {
    const auto id = synth_patient_id(i);
    const auto group = draw_age_group(age_rng, cfg.age_weights);
    auto p = generate_patient(id, labels[i], group, derive_seed(cfg.seed, 1000 + i), cfg);
    PatientEntry e;
    e.patient_id = id;
    e.age_months = p.truth.age_months;
    e.sex = p.truth.sex;
    e.label = labels[i];
    for (std::size_t s = 0; s < kAllSites.size(); ++s) {
      const auto rel = std::filesystem::path("wav") / (id + "_" + std::string(site_name(kAllSites[s])) + ".wav");
      write_wav(p.recordings[s], out_dir / rel);
      e.recordings[kAllSites[s]] = out_dir / rel;
    }
    patients[id] = to_json(p.truth);
    ds.manifest.entries.push_back(std::move(e));
    ds.truth.push_back(std::move(p.truth));
  }
  save_manifest(ds.manifest, out_dir / "manifest.csv");
  const nlohmann::json truth = {{"config", to_json(cfg)}, {"patients", patients}};
  detail::write_file_bytes(out_dir / "truth.json", truth.dump(2) + "\n");
  return ds;
}

}  // namespace pcgscreen
