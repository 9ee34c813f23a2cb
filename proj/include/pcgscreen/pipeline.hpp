#pragma once

// End-to-end glue: one JSON config for every stage, the on-disk feature
// cache, training from a patient split and patient-level evaluation reports.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pcgscreen/audio_io.hpp"
#include "pcgscreen/common.hpp"
#include "pcgscreen/dsp.hpp"
#include "pcgscreen/handcrafted.hpp"
#include "pcgscreen/metrics.hpp"
#include "pcgscreen/mfcc.hpp"
#include "pcgscreen/nn.hpp"
#include "pcgscreen/selection.hpp"
#include "pcgscreen/synth.hpp"

namespace pcgscreen {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct FeatureToggles {
  bool mfcc = true;
  bool hrv = true;
  bool spectral = true;
  bool operator==(const FeatureToggles&) const = default;
};

struct PipelineConfig {
  std::uint64_t seed = 42;
  int sample_rate_hz = 4000;
  bool resample = false;
  BandpassSpec filter{};
  MfccConfig mfcc{};
  HandcraftedConfig handcrafted{};
  FeatureToggles features{};
  bool select_by_p = false;  // keep only handcrafted features with p < alpha on the training split
  double alpha = 0.05;
  ModelConfig model{};
  TrainConfig train{};
  std::array<double, 3> split{0.7, 0.2, 0.1};
  Aggregation aggregation = Aggregation::AverageProb;
  double threshold = 0.5;
  std::size_t cv_folds = 5;
  SynthConfig synth{};
};

/// Handcrafted feature indices enabled by the toggles.
inline std::vector<std::size_t> handcrafted_indices(const FeatureToggles& t) {
  std::vector<std::size_t> idx;
  if (t.hrv)
    for (std::size_t i = 0; i < kHrvDim; ++i) idx.push_back(i);
  if (t.spectral)
    for (std::size_t i = kHrvDim; i < kHandcraftedDim; ++i) idx.push_back(i);
  return idx;
}

inline void validate(const PipelineConfig& c) {
  validate(c.mfcc);
  validate(c.model);
  validate(c.train);
  if (c.filter.order <= 0 || c.filter.order % 2 != 0) fail(Errc::InvalidConfig, "filter order must be even");
  if (c.sample_rate_hz <= 0) fail(Errc::InvalidConfig, "sample rate must be positive");
  if (c.mfcc.stft.sample_rate_hz != c.sample_rate_hz || c.filter.sample_rate_hz != c.sample_rate_hz)
    fail(Errc::InvalidConfig, "filter, STFT and pipeline sample rates differ");
  if (c.model.use_mfcc != c.features.mfcc) fail(Errc::InvalidConfig, "model.use_mfcc must match features.mfcc");
  if (c.features.mfcc && c.model.in_rows != c.mfcc.stacked_rows())
    fail(Errc::InvalidConfig, "model.in_rows = " + std::to_string(c.model.in_rows) + " but MFCC stack has " +
                                  std::to_string(c.mfcc.stacked_rows()) + " rows");
  if (!c.select_by_p && c.model.handcrafted_dim != handcrafted_indices(c.features).size())
    fail(Errc::InvalidConfig, "model.handcrafted_dim does not match the enabled handcrafted features");
  if (!(c.threshold >= 0 && c.threshold <= 1)) fail(Errc::InvalidConfig, "threshold must be in [0, 1]");
  if (!(c.alpha >= 0 && c.alpha <= 1)) fail(Errc::InvalidConfig, "alpha must be in [0, 1]");
  if (c.cv_folds < 2) fail(Errc::InvalidConfig, "cv folds must be >= 2");
  double sum = 0;
  for (double r : c.split) {
    if (!(r > 0)) fail(Errc::RatioSumInvalid, "split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) fail(Errc::RatioSumInvalid, "split ratios must sum to 1");
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  const auto& hp = c.handcrafted.beats.priors;
  return {
      {"seed", c.seed},
      {"sample_rate_hz", c.sample_rate_hz},
      {"resample", c.resample},
      {"filter", {{"order", c.filter.order}, {"low_hz", c.filter.low_hz}, {"high_hz", c.filter.high_hz}}},
      {"stft", {{"win_len", c.mfcc.stft.win_len}, {"hop", c.mfcc.stft.hop}, {"n_fft", c.mfcc.stft.n_fft}}},
      {"mfcc",
       {{"n_filters", c.mfcc.n_filters},
        {"f_min_hz", c.mfcc.f_min_hz},
        {"f_max_hz", c.mfcc.f_max_hz},
        {"n_coeffs", c.mfcc.n_coeffs},
        {"keep_c0", c.mfcc.keep_c0},
        {"log_floor", c.mfcc.log_floor},
        {"delta_window", c.mfcc.delta_window}}},
      {"handcrafted",
       {{"rolloff_pct", c.handcrafted.spectral.rolloff_pct},
        {"contrast_bands", c.handcrafted.spectral.contrast_bands},
        {"contrast_quantile", c.handcrafted.spectral.contrast_quantile},
        {"band_lo_hz", c.handcrafted.spectral.band_lo_hz},
        {"band_hi_hz", c.handcrafted.spectral.band_hi_hz},
        {"smooth_ms", c.handcrafted.beats.smooth_ms},
        {"min_separation", c.handcrafted.beats.min_separation},
        {"peak_rel_threshold", c.handcrafted.beats.peak_rel_threshold},
        {"hr_priors",
         {{"infant_max_months", hp.infant_max_months},
          {"child_max_months", hp.child_max_months},
          {"infant_bpm", {hp.infant.min_bpm, hp.infant.max_bpm}},
          {"child_bpm", {hp.child.min_bpm, hp.child.max_bpm}},
          {"adolescent_bpm", {hp.adolescent.min_bpm, hp.adolescent.max_bpm}}}}}},
      {"features", {{"mfcc", c.features.mfcc}, {"hrv", c.features.hrv}, {"spectral", c.features.spectral}}},
      {"selection", {{"filter", c.select_by_p}, {"alpha", c.alpha}}},
      {"model", to_json(c.model)},
      {"train", to_json(c.train)},
      {"split", c.split},
      {"aggregation", aggregation_name(c.aggregation)},
      {"threshold", c.threshold},
      {"cv_folds", c.cv_folds},
      {"synth", to_json(c.synth)},
  };
}

/// Overlays a (possibly partial) JSON document on the defaults. Type errors and
/// unknown top-level keys are configuration errors.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig c = {}) {
  static const std::set<std::string> kKeys = {"seed",     "sample_rate_hz", "resample", "filter",    "stft",
                                              "mfcc",     "handcrafted",    "features", "selection", "model",
                                              "train",    "split",          "aggregation", "threshold", "cv_folds",
                                              "synth"};
  if (!j.is_object()) fail(Errc::InvalidConfig, "config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!kKeys.count(k)) fail(Errc::InvalidConfig, "unknown config key '" + k + "'");
  try {
    c.seed = j.value("seed", c.seed);
    c.sample_rate_hz = j.value("sample_rate_hz", c.sample_rate_hz);
    c.resample = j.value("resample", c.resample);
    c.filter.sample_rate_hz = c.sample_rate_hz;
    c.mfcc.stft.sample_rate_hz = c.sample_rate_hz;
    if (j.contains("filter")) {
      const auto& f = j["filter"];
      c.filter.order = f.value("order", c.filter.order);
      c.filter.low_hz = f.value("low_hz", c.filter.low_hz);
      c.filter.high_hz = f.value("high_hz", c.filter.high_hz);
    }
    if (j.contains("stft")) {
      const auto& s = j["stft"];
      c.mfcc.stft.win_len = s.value("win_len", c.mfcc.stft.win_len);
      c.mfcc.stft.hop = s.value("hop", c.mfcc.stft.hop);
      c.mfcc.stft.n_fft = s.value("n_fft", c.mfcc.stft.n_fft);
    }
    if (j.contains("mfcc")) {
      const auto& m = j["mfcc"];
      c.mfcc.n_filters = m.value("n_filters", c.mfcc.n_filters);
      c.mfcc.f_min_hz = m.value("f_min_hz", c.mfcc.f_min_hz);
      c.mfcc.f_max_hz = m.value("f_max_hz", c.mfcc.f_max_hz);
      c.mfcc.n_coeffs = m.value("n_coeffs", c.mfcc.n_coeffs);
      c.mfcc.keep_c0 = m.value("keep_c0", c.mfcc.keep_c0);
      c.mfcc.log_floor = m.value("log_floor", c.mfcc.log_floor);
      c.mfcc.delta_window = m.value("delta_window", c.mfcc.delta_window);
    }
    if (j.contains("handcrafted")) {
      const auto& h = j["handcrafted"];
      auto& sp = c.handcrafted.spectral;
      auto& bd = c.handcrafted.beats;
      sp.rolloff_pct = h.value("rolloff_pct", sp.rolloff_pct);
      sp.contrast_bands = h.value("contrast_bands", sp.contrast_bands);
      sp.contrast_quantile = h.value("contrast_quantile", sp.contrast_quantile);
      sp.band_lo_hz = h.value("band_lo_hz", sp.band_lo_hz);
      sp.band_hi_hz = h.value("band_hi_hz", sp.band_hi_hz);
      bd.smooth_ms = h.value("smooth_ms", bd.smooth_ms);
      bd.min_separation = h.value("min_separation", bd.min_separation);
      bd.peak_rel_threshold = h.value("peak_rel_threshold", bd.peak_rel_threshold);
      if (h.contains("hr_priors")) {
        const auto& p = h["hr_priors"];
        auto& hp = bd.priors;
        hp.infant_max_months = p.value("infant_max_months", hp.infant_max_months);
        hp.child_max_months = p.value("child_max_months", hp.child_max_months);
        const auto band = [&](const char* key, HeartRateBand& b) {
          if (!p.contains(key)) return;
          const auto v = p[key].get<std::array<double, 2>>();
          b = {v[0], v[1]};
        };
        band("infant_bpm", hp.infant);
        band("child_bpm", hp.child);
        band("adolescent_bpm", hp.adolescent);
      }
    }
    if (j.contains("features")) {
      const auto& f = j["features"];
      c.features.mfcc = f.value("mfcc", c.features.mfcc);
      c.features.hrv = f.value("hrv", c.features.hrv);
      c.features.spectral = f.value("spectral", c.features.spectral);
    }
    if (j.contains("selection")) {
      c.select_by_p = j["selection"].value("filter", c.select_by_p);
      c.alpha = j["selection"].value("alpha", c.alpha);
    }
    // Derived model fields follow the feature setup unless set explicitly.
    c.model.in_rows = c.mfcc.stacked_rows();
    c.model.use_mfcc = c.features.mfcc;
    c.model.handcrafted_dim = handcrafted_indices(c.features).size();
    if (j.contains("model")) c.model = model_config_from_json(j["model"], c.model);
    if (j.contains("train")) c.train = train_config_from_json(j["train"], c.train);
    if (j.contains("split")) c.split = j["split"].get<std::array<double, 3>>();
    if (j.contains("aggregation")) c.aggregation = parse_aggregation(j["aggregation"].get<std::string>());
    c.threshold = j.value("threshold", c.threshold);
    c.cv_folds = j.value("cv_folds", c.cv_folds);
    if (j.contains("synth")) c.synth = synth_config_from_json(j["synth"], c.synth);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, std::string("config: ") + e.what());
  }
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(Errc::InvalidConfig, e.what());
  }
  return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

/// Filterbank and filter built once per run.
struct Featurizer {
  PipelineConfig config;
  FilterCoefficients filter;
  MelFilterBank bank;

  explicit Featurizer(const PipelineConfig& cfg)
      : config(cfg),
        filter(design_butterworth_bandpass(cfg.filter.order, cfg.filter.low_hz, cfg.filter.high_hz,
                                           cfg.sample_rate_hz)),
        bank(build_mel_filterbank(cfg.mfcc.mel())) {}

  /// MFCC stack (double) and handcrafted vector for one recording.
  std::pair<Matrix<double>, HandcraftedResult> compute(const Recording& rec, int age_months) const {
    const auto x = preprocess(rec.samples, filter);
    const auto spec = stft(x, config.mfcc.stft);
    auto mfcc = stack_with_deltas(mfcc_from_spectrogram(spec, bank, config.mfcc), config.mfcc.delta_window);
    auto hc = extract_handcrafted(x, spec, config.sample_rate_hz, age_months, config.handcrafted);
    return {std::move(mfcc), hc};
  }

  FeatureBundle bundle(const Recording& rec, int age_months) const {
    auto [m, hc] = compute(rec, age_months);
    FeatureBundle fb;
    fb.mfcc = Matrix<float>(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.data().size(); ++i) fb.mfcc.data()[i] = static_cast<float>(m.data()[i]);
    fb.handcrafted = hc.values;
    fb.quality_flag = hc.quality_flag;
    return fb;
  }

  Recording read(const std::filesystem::path& path) const {
    return read_wav(path, {config.sample_rate_hz, config.resample});
  }
};

inline std::string recording_key(std::string_view patient_id, Site site) {
  return std::string(patient_id) + "_" + std::string(site_name(site));
}

struct FeaturizeFailure {
  std::string patient_id;
  Site site = Site::AV;
  std::filesystem::path path;
  std::string error;
};

struct FeaturizeSummary {
  std::size_t recordings = 0;
  std::size_t written = 0;
  std::size_t imputed = 0;  // beat detection failed; HRV left for training-set imputation
  std::vector<FeaturizeFailure> failures;
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string handcrafted_csv_header() {
  std::string h = "patient_id,site,quality_flag";
  for (auto n : kHandcraftedNames) h += "," + std::string(n);
  return h + "\n";
}

/// Writes <out>/manifest.csv, <out>/mfcc/<id>_<site>.mfc and <out>/handcrafted.csv.
/// Per-recording failures are collected rather than thrown.
inline FeaturizeSummary featurize(const PatientManifest& manifest, const std::filesystem::path& out_dir,
                                  const PipelineConfig& cfg) {
  validate(cfg);
  const Featurizer fz(cfg);
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "mfcc", ec);
  if (ec) fail(Errc::IoFailure, "cannot create " + (out_dir / "mfcc").string());

  FeaturizeSummary summary;
  std::string csv = handcrafted_csv_header();
  for (const auto& e : manifest.entries) {
    for (const auto& [site, path] : e.recordings) {
      ++summary.recordings;
      try {
        auto [m, hc] = fz.compute(fz.read(path), e.age_months);
        write_mfc1(m, out_dir / "mfcc" / (recording_key(e.patient_id, site) + ".mfc"));
        csv += e.patient_id + "," + std::string(site_name(site)) + "," + (hc.quality_flag ? "1" : "0");
        for (double v : hc.values) csv += "," + format_double(v);
        csv += "\n";
        ++summary.written;
        if (hc.quality_flag) ++summary.imputed;
      } catch (const Error& err) {
        summary.failures.push_back({e.patient_id, site, path, err.what()});
      }
    }
  }
  detail::write_file_bytes(out_dir / "handcrafted.csv", csv);
  save_manifest(manifest, out_dir / "manifest.csv");
  return summary;
}

inline nlohmann::json to_json(const FeaturizeSummary& s) {
  auto failures = nlohmann::json::array();
  for (const auto& f : s.failures)
    failures.push_back(
        {{"patient_id", f.patient_id}, {"site", site_name(f.site)}, {"path", f.path.string()}, {"error", f.error}});
  return {{"recordings", s.recordings}, {"written", s.written}, {"hrv_imputed", s.imputed}, {"failures", failures}};
}

/// Feature cache loaded from a featurize output directory.
struct FeatureCache {
  PatientManifest manifest;
  std::map<std::string, FeatureBundle> bundles;  // by recording_key

  const FeatureBundle* find(std::string_view pid, Site site) const {
    auto it = bundles.find(recording_key(pid, site));
    return it == bundles.end() ? nullptr : &it->second;
  }

  /// Recordings of a patient that have cached features, in site order.
  std::vector<std::pair<Site, const FeatureBundle*>> recordings_of(const PatientEntry& e) const {
    std::vector<std::pair<Site, const FeatureBundle*>> out;
    for (const auto& [site, path] : e.recordings)
      if (const auto* fb = find(e.patient_id, site)) out.emplace_back(site, fb);
    return out;
  }
};

inline double parse_csv_double(const std::string& s) {
  if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(Errc::MalformedRow, "bad number '" + s + "' in handcrafted.csv");
  }
}

/// `manifest_override` replaces the cache's own manifest copy when given.
inline FeatureCache load_feature_cache(const std::filesystem::path& dir,
                                       const std::optional<std::filesystem::path>& manifest_override = {}) {
  FeatureCache cache;
  cache.manifest = load_manifest(manifest_override ? *manifest_override : dir / "manifest.csv");
  std::istringstream in(detail::read_file_bytes(dir / "handcrafted.csv"));
  std::string line;
  std::getline(in, line);
  if (detail::trim(line) + "\n" != handcrafted_csv_header())
    fail(Errc::MissingColumn, "handcrafted.csv header does not match the expected columns");
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cols = detail::split_csv_line(line);
    if (cols.size() != 3 + kHandcraftedDim) fail(Errc::MalformedRow, "handcrafted.csv row has wrong arity");
    const auto pid = detail::trim(cols[0]);
    const Site site = parse_site(detail::trim(cols[1]));
    FeatureBundle fb;
    fb.quality_flag = detail::trim(cols[2]) == "1";
    for (std::size_t i = 0; i < kHandcraftedDim; ++i) fb.handcrafted[i] = parse_csv_double(detail::trim(cols[3 + i]));
    fb.mfcc = read_mfc1(dir / "mfcc" / (recording_key(pid, site) + ".mfc"));
    cache.bundles[recording_key(pid, site)] = std::move(fb);
  }
  return cache;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct RecordingRef {
  std::string patient_id;
  Site site;
  int label;
  const FeatureBundle* bundle;
};

inline std::vector<RecordingRef> collect_recordings(const FeatureCache& cache, std::span<const std::string> ids) {
  std::vector<RecordingRef> out;
  for (const auto& id : ids) {
    const auto* e = cache.manifest.find(id);
    if (!e) fail(Errc::InconsistentPatient, "patient " + id + " is not in the manifest");
    for (const auto& [site, fb] : cache.recordings_of(*e)) out.push_back({id, site, label_to_int(e->label), fb});
  }
  return out;
}

/// Per-feature medians of finite HRV values; 0 when a feature is never finite.
inline std::array<double, kHrvDim> hrv_medians(std::span<const RecordingRef> recs) {
  std::array<double, kHrvDim> med{};
  for (std::size_t i = 0; i < kHrvDim; ++i) {
    std::vector<double> v;
    for (const auto& r : recs)
      if (std::isfinite(r.bundle->handcrafted[i])) v.push_back(r.bundle->handcrafted[i]);
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    med[i] = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  return med;
}

inline HandcraftedVector impute(const HandcraftedVector& v, const std::array<double, kHrvDim>& med) {
  HandcraftedVector out = v;
  for (std::size_t i = 0; i < kHrvDim; ++i)
    if (!std::isfinite(out[i])) out[i] = med[i];
  return out;
}

/// Mann-Whitney screen of all 11 handcrafted features over the given recordings.
inline SelectionResult select_on(std::span<const RecordingRef> recs, const std::array<double, kHrvDim>& med,
                                 double alpha) {
  FeatureTable t;
  t.values = Matrix<double>(recs.size(), kHandcraftedDim);
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const auto v = impute(recs[r].bundle->handcrafted, med);
    for (std::size_t f = 0; f < kHandcraftedDim; ++f) t.values(r, f) = v[f];
    t.labels.push_back(recs[r].label ? Label::CHD : Label::NonCHD);
  }
  for (auto n : kHandcraftedNames) t.feature_names.emplace_back(n);
  return select_features(t, alpha);
}

struct TrainOutcome {
  Classifier classifier;
  TrainHistory history;
  std::optional<SelectionResult> selection;
};

/// Fits normalization statistics, class weights and the network on the
/// training patients; the validation patients drive early stopping.
inline TrainOutcome train_classifier(const FeatureCache& cache, std::span<const std::string> train_ids,
                                     std::span<const std::string> val_ids, const PipelineConfig& cfg) {
  validate(cfg);
  const auto train_recs = collect_recordings(cache, train_ids);
  const auto val_recs = collect_recordings(cache, val_ids);
  if (train_recs.empty() || val_recs.empty()) fail(Errc::EmptyDataset, "no cached recordings for train or validation");

  TrainOutcome out;
  Classifier& clf = out.classifier;
  clf.hrv_medians = hrv_medians(train_recs);
  clf.handcrafted_indices = handcrafted_indices(cfg.features);
  if (cfg.select_by_p) {
    out.selection = select_on(train_recs, clf.hrv_medians, cfg.alpha);
    std::vector<std::size_t> kept;
    for (auto i : clf.handcrafted_indices)
      if (out.selection->tests[i].selected) kept.push_back(i);
    clf.handcrafted_indices = kept;
  }
  ModelConfig mc = cfg.model;
  mc.handcrafted_dim = clf.handcrafted_indices.size();
  if (mc.fused_dim() == 0) fail(Errc::EmptyGroup, "no input features remain");

  // Handcrafted z-score statistics over training recordings.
  std::vector<std::vector<double>> cols(clf.handcrafted_indices.size());
  for (const auto& r : train_recs) {
    const auto v = impute(r.bundle->handcrafted, clf.hrv_medians);
    for (std::size_t j = 0; j < cols.size(); ++j) cols[j].push_back(v[clf.handcrafted_indices[j]]);
  }
  clf.handcrafted_norm = fit_standardizer(cols);

  // Per-row MFCC statistics over every training frame.
  if (mc.use_mfcc) {
    const std::size_t rows = train_recs.front().bundle->mfcc.rows();
    if (rows != mc.in_rows) fail(Errc::ShapeMismatch, "cached MFCC rows differ from model.in_rows");
    std::vector<std::vector<double>> mcols(rows);
    for (const auto& r : train_recs)
      for (std::size_t i = 0; i < rows; ++i)
        for (float v : r.bundle->mfcc.row(i)) mcols[i].push_back(v);
    clf.mfcc_norm = fit_standardizer(mcols);
  }

  std::vector<int> labels;
  for (const auto& r : train_recs) labels.push_back(r.label);
  clf.class_weights = class_weights(labels);
  clf.train_config = cfg.train;
  clf.net = init_model<float>(mc, derive_seed(cfg.train.seed, 0x696e6974ULL));

  // Prepared inputs must outlive the samples that point at them.
  const auto prepare = [&](std::span<const RecordingRef> recs, std::vector<Matrix<float>>& mats,
                           std::vector<std::vector<float>>& hcs) {
    mats.reserve(recs.size());
    hcs.reserve(recs.size());
    std::vector<Sample<float>> samples;
    for (const auto& r : recs) {
      mats.push_back(prepare_mfcc(clf, r.bundle->mfcc));
      hcs.push_back(prepare_handcrafted(clf, r.bundle->handcrafted));
    }
    for (std::size_t i = 0; i < recs.size(); ++i)
      samples.push_back({&mats[i], std::span<const float>(hcs[i]), recs[i].label});
    return samples;
  };
  std::vector<Matrix<float>> tm, vm;
  std::vector<std::vector<float>> th, vh;
  const auto train_samples = prepare(train_recs, tm, th);
  const auto val_samples = prepare(val_recs, vm, vh);

  auto result = train(clf.net, std::span<const Sample<float>>(train_samples),
                      std::span<const Sample<float>>(val_samples), clf.class_weights, cfg.train);
  clf.net = std::move(result.model);
  out.history = std::move(result.history);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct PatientPrediction {
  std::string patient_id;
  Label label = Label::NonCHD;
  std::vector<std::pair<Site, double>> recordings;
  double aggregated_prob = 0.0;
  Label decision = Label::NonCHD;
};

struct MethodReport {
  Aggregation method = Aggregation::AverageProb;
  double threshold = 0.5;
  ConfusionMetrics metrics;
  std::optional<RocResult> roc;
  std::optional<PrResult> pr;
  std::vector<PatientPrediction> patients;
};

struct EvalReport {
  std::vector<MethodReport> methods;
  std::size_t n_patients = 0;
  std::size_t n_recordings = 0;
};

/// Scores every cached recording of each patient, then aggregates per method.
inline EvalReport evaluate_patients(const Classifier& clf, const FeatureCache& cache, std::span<const std::string> ids,
                                    std::span<const Aggregation> methods, double threshold) {
  std::vector<PatientPrediction> base;
  EvalReport rep;
  for (const auto& id : ids) {
    const auto* e = cache.manifest.find(id);
    if (!e) fail(Errc::InconsistentPatient, "patient " + id + " is not in the manifest");
    PatientPrediction p;
    p.patient_id = id;
    p.label = e->label;
    for (const auto& [site, fb] : cache.recordings_of(*e)) p.recordings.emplace_back(site, predict_recording(clf, *fb));
    if (p.recordings.empty()) continue;  // every recording failed featurization
    rep.n_recordings += p.recordings.size();
    base.push_back(std::move(p));
  }
  if (base.empty()) fail(Errc::EmptyDataset, "no scorable patients");
  rep.n_patients = base.size();

  for (auto method : methods) {
    MethodReport mr;
    mr.method = method;
    mr.threshold = threshold;
    std::vector<double> scores;
    std::vector<int> decisions, labels;
    for (auto p : base) {
      std::vector<double> probs;
      for (const auto& [s, pr] : p.recordings) probs.push_back(pr);
      const auto agg = aggregate_patient(probs, method, threshold);
      p.aggregated_prob = agg.prob;
      p.decision = agg.decision;
      scores.push_back(agg.prob);
      decisions.push_back(label_to_int(agg.decision));
      labels.push_back(label_to_int(p.label));
      mr.patients.push_back(std::move(p));
    }
    mr.metrics = confusion_metrics(decisions, labels);
    const auto [pos, neg] = detail::class_counts(labels);
    if (pos > 0 && neg > 0) mr.roc = roc_auroc(scores, labels);
    if (pos > 0) mr.pr = pr_auprc(scores, labels);
    rep.methods.push_back(std::move(mr));
  }
  return rep;
}

inline nlohmann::json to_json(const MethodReport& m) {
  auto j = to_json(m.metrics);
  j["method"] = aggregation_name(m.method);
  j["threshold"] = m.threshold;
  j["auroc"] = m.roc ? nlohmann::json(m.roc->auroc) : nlohmann::json(nullptr);
  j["auprc"] = m.pr ? nlohmann::json(m.pr->auprc) : nlohmann::json(nullptr);
  auto pts = [](const auto& v) {
    auto a = nlohmann::json::array();
    for (const auto& [x, y] : v) a.push_back({x, y});
    return a;
  };
  j["roc"] = m.roc ? pts(m.roc->points) : nlohmann::json::array();
  j["pr"] = m.pr ? pts(m.pr->points) : nlohmann::json::array();
  auto patients = nlohmann::json::array();
  for (const auto& p : m.patients) {
    auto recs = nlohmann::json::array();
    for (const auto& [s, pr] : p.recordings) recs.push_back({{"site", site_name(s)}, {"prob_chd", pr}});
    patients.push_back({{"patient_id", p.patient_id},
                        {"label", label_name(p.label)},
                        {"recordings", recs},
                        {"aggregated_prob", p.aggregated_prob},
                        {"decision", label_name(p.decision)}});
  }
  j["patients"] = patients;
  return j;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json methods = nlohmann::json::object();
  for (const auto& m : r.methods) methods[std::string(aggregation_name(m.method))] = to_json(m);
  return {{"n_patients", r.n_patients}, {"n_recordings", r.n_recordings}, {"methods", methods}};
}

/// ROC and PR points as CSV rows: curve,x,y.
inline std::string curves_csv(const MethodReport& m) {
  std::string out = "curve,x,y\n";
  if (m.roc)
    for (const auto& [x, y] : m.roc->points) out += "roc," + format_double(x) + "," + format_double(y) + "\n";
  if (m.pr)
    for (const auto& [x, y] : m.pr->points) out += "pr," + format_double(x) + "," + format_double(y) + "\n";
  return out;
}

}  // namespace pcgscreen
