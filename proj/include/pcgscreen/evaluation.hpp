#pragma once

// Patient-wise k-fold cross-validation and feature-group ablation.

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcgscreen/pipeline.hpp"

namespace pcgscreen {

/// Label-stratified patient folds: shuffled CHD ids then shuffled NonCHD ids,
/// dealt round-robin. Each fold lists its ids in manifest order.
inline std::vector<std::vector<std::string>> make_folds(const PatientManifest& manifest, std::size_t k,
                                                        std::uint64_t seed) {
  if (k < 2) fail(Errc::InvalidConfig, "k must be >= 2");
  if (manifest.entries.size() < k)
    fail(Errc::TooFewPatients, std::to_string(manifest.entries.size()) + " patients for " + std::to_string(k) + " folds");
  const auto groups = detail::shuffled_by_label(manifest, seed);
  std::map<std::string, std::size_t> fold_of;
  std::size_t i = 0;
  for (const auto& g : groups)
    for (const auto& id : g) fold_of[id] = i++ % k;
  std::vector<std::vector<std::string>> folds(k);
  for (const auto& e : manifest.entries) folds[fold_of.at(e.patient_id)].push_back(e.patient_id);
  return folds;
}

struct FoldResult {
  std::size_t fold = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  ConfusionMetrics metrics;
  std::optional<double> auroc;
  std::size_t best_epoch = 0;
};

struct CvReport {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> folds;
  std::vector<FoldResult> results;
  std::optional<double> pooled_auroc;  // AverageProb scores of every held-out patient
  std::vector<PatientPrediction> held_out;
};

/// Fold i is the test set, fold (i + 1) mod k validates, the rest trains.
/// With k = 2 the training fold also serves as validation.
inline CvReport cross_validate(const FeatureCache& cache, std::size_t k, std::uint64_t seed,
                               const PipelineConfig& cfg) {
  CvReport rep;
  rep.k = k;
  rep.seed = seed;
  rep.folds = make_folds(cache.manifest, k, seed);
  const std::array<Aggregation, 1> avg{Aggregation::AverageProb};
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t v = (i + 1) % k;
    std::vector<std::string> train_ids;
    for (std::size_t f = 0; f < k; ++f)
      if (f != i && (f != v || k == 2)) train_ids.insert(train_ids.end(), rep.folds[f].begin(), rep.folds[f].end());
    const auto& val_ids = k == 2 ? train_ids : rep.folds[v];

    PipelineConfig fc = cfg;
    fc.train.seed = derive_seed(cfg.train.seed, i);
    const auto outcome = train_classifier(cache, train_ids, val_ids, fc);
    const auto ev = evaluate_patients(outcome.classifier, cache, rep.folds[i], avg, cfg.threshold);
    const auto& m = ev.methods.front();

    FoldResult fr;
    fr.fold = i;
    fr.n_train = train_ids.size();
    fr.n_val = k == 2 ? 0 : val_ids.size();
    fr.n_test = rep.folds[i].size();
    fr.metrics = m.metrics;
    if (m.roc) fr.auroc = m.roc->auroc;
    fr.best_epoch = outcome.history.best_epoch;
    rep.results.push_back(fr);
    for (const auto& p : m.patients) {
      pooled_scores.push_back(p.aggregated_prob);
      pooled_labels.push_back(label_to_int(p.label));
      rep.held_out.push_back(p);
    }
  }
  const auto [pos, neg] = detail::class_counts(pooled_labels);
  if (pos > 0 && neg > 0) rep.pooled_auroc = roc_auroc(pooled_scores, pooled_labels).auroc;
  return rep;
}

/// Mean and sample SD of the defined entries.
inline nlohmann::json summarize(const std::vector<std::optional<double>>& v) {
  std::vector<double> d;
  for (const auto& x : v)
    if (x) d.push_back(*x);
  if (d.empty()) return {{"mean", nullptr}, {"sd", nullptr}, {"n", 0}};
  const auto [m, sd] = mean_sd(d);
  return {{"mean", m}, {"sd", sd}, {"n", d.size()}};
}

inline nlohmann::json to_json(const CvReport& r) {
  auto folds = nlohmann::json::array();
  std::map<std::string, std::vector<std::optional<double>>> cols;
  for (const auto& f : r.results) {
    folds.push_back({{"fold", f.fold},
                     {"n_train", f.n_train},
                     {"n_val", f.n_val},
                     {"n_test", f.n_test},
                     {"test_ids", r.folds[f.fold]},
                     {"best_epoch", f.best_epoch},
                     {"metrics", to_json(f.metrics)},
                     {"auroc", optional_json(f.auroc)}});
    cols["accuracy"].push_back(f.metrics.accuracy);
    cols["sensitivity"].push_back(f.metrics.sensitivity);
    cols["specificity"].push_back(f.metrics.specificity);
    cols["f1"].push_back(f.metrics.f1);
    cols["auroc"].push_back(f.auroc);
  }
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [name, v] : cols) summary[name] = summarize(v);
  return {{"k", r.k},
          {"seed", r.seed},
          {"aggregation", "average"},
          {"folds", folds},
          {"summary", summary},
          {"pooled_auroc", optional_json(r.pooled_auroc)}};
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// Parses "mfcc+hrv+spectral" style group names; "all" enables everything.
inline FeatureToggles parse_feature_group(std::string_view spec) {
  FeatureToggles t{false, false, false};
  std::string s(spec);
  std::size_t start = 0;
  bool any = false;
  while (start <= s.size()) {
    const auto end = std::min(s.find('+', start), s.size());
    const auto part = detail::lower(detail::trim(std::string_view(s).substr(start, end - start)));
    if (part == "all") t = {true, true, true};
    else if (part == "mfcc") t.mfcc = true;
    else if (part == "hrv") t.hrv = true;
    else if (part == "spectral") t.spectral = true;
    else if (part == "handcrafted") t.hrv = t.spectral = true;
    else if (!part.empty()) fail(Errc::InvalidArgument, "unknown feature group '" + part + "'");
    any = any || !part.empty();
    start = end + 1;
  }
  if (!any || !(t.mfcc || t.hrv || t.spectral)) fail(Errc::EmptyGroup, "feature group '" + s + "' is empty");
  return t;
}

inline std::string feature_group_name(const FeatureToggles& t) {
  if (t.mfcc && t.hrv && t.spectral) return "all";
  std::string out;
  const auto add = [&](bool on, const char* n) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += n;
  };
  add(t.mfcc, "mfcc");
  add(t.hrv, "hrv");
  add(t.spectral, "spectral");
  return out;
}

inline const std::vector<std::string>& default_ablation_groups() {
  static const std::vector<std::string> g = {"all", "mfcc", "hrv", "spectral", "hrv+spectral"};
  return g;
}

struct AblationRow {
  std::string group;
  std::optional<double> accuracy;
  std::optional<double> auroc;
  std::size_t best_epoch = 0;
};

/// One training run per feature group on the same split and seed; scored on
/// the test patients with AverageProb.
inline std::vector<AblationRow> ablate(const FeatureCache& cache, std::span<const std::string> groups,
                                       const SplitAssignment& split, const PipelineConfig& cfg) {
  if (groups.empty()) fail(Errc::EmptyGroup, "no feature groups given");
  const std::array<Aggregation, 1> avg{Aggregation::AverageProb};
  std::vector<AblationRow> rows;
  for (const auto& g : groups) {
    const auto toggles = parse_feature_group(g);
    PipelineConfig gc = cfg;
    gc.features = toggles;
    gc.model.use_mfcc = toggles.mfcc;
    gc.model.handcrafted_dim = handcrafted_indices(toggles).size();
    const auto outcome = train_classifier(cache, split.train, split.validation, gc);
    const auto ev = evaluate_patients(outcome.classifier, cache, split.test, avg, cfg.threshold);
    const auto& m = ev.methods.front();
    rows.push_back({feature_group_name(toggles), m.metrics.accuracy,
                    m.roc ? std::optional<double>(m.roc->auroc) : std::nullopt, outcome.history.best_epoch});
  }
  return rows;
}

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
  auto a = nlohmann::json::array();
  for (const auto& r : rows)
    a.push_back({{"group", r.group},
                 {"accuracy", optional_json(r.accuracy)},
                 {"auroc", optional_json(r.auroc)},
                 {"best_epoch", r.best_epoch}});
  return a;
}

}  // namespace pcgscreen
