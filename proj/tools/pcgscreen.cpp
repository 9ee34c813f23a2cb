// pcgscreen command-line interface.
//
// Results go to stdout as JSON, progress to stderr.
// Exit codes: 0 success, 1 data error, 2 configuration error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcgscreen/pcgscreen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pcgscreen;

namespace {

constexpr int kExitData = 1;
constexpr int kExitConfig = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "JSON pipeline config (written with defaults if missing)");
  cmd->add_option("--seed", c.seed, "RNG seed (overrides the config)");
  auto* o = cmd->add_option("--out", c.out, "Output directory");
  if (out_required) o->required();
}

void log(const std::string& msg) { std::cerr << "[pcgscreen] " << msg << "\n"; }

PipelineConfig resolve_config(const Common& c) {
  PipelineConfig cfg;
  if (!c.config.empty()) {
    if (fs::exists(c.config)) {
      cfg = load_pipeline_config(c.config);
    } else {
      detail::write_file_bytes(c.config, to_json(cfg).dump(2) + "\n");
      log("wrote default config to " + c.config);
    }
  }
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.train.seed = *c.seed;
    cfg.synth.seed = *c.seed;
  }
  validate(cfg);
  return cfg;
}

void archive_config(const PipelineConfig& cfg, const std::string& out) {
  if (out.empty()) return;
  fs::create_directories(out);
  detail::write_file_bytes(fs::path(out) / "config.json", to_json(cfg).dump(2) + "\n");
}

std::array<double, 3> parse_ratios(const std::string& s) {
  std::array<double, 3> r{};
  std::size_t i = 0, start = 0;
  while (start <= s.size()) {
    const auto end = std::min(s.find(',', start), s.size());
    if (i >= 3) fail(Errc::RatioSumInvalid, "--split needs three comma-separated ratios");
    try {
      r[i++] = std::stod(s.substr(start, end - start));
    } catch (const std::exception&) {
      fail(Errc::RatioSumInvalid, "bad ratio in '" + s + "'");
    }
    start = end + 1;
  }
  if (i != 3) fail(Errc::RatioSumInvalid, "--split needs three comma-separated ratios");
  return r;
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

std::vector<Aggregation> parse_methods(const std::string& s) {
  if (s == "all") return {kAllAggregations.begin(), kAllAggregations.end()};
  return {parse_aggregation(s)};
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, std::optional<std::size_t> n, std::optional<double> ratio,
              std::optional<double> murmur) {
  auto cfg = resolve_config(c);
  if (n) cfg.synth.n_patients = *n;
  if (ratio) cfg.synth.chd_ratio = *ratio;
  if (murmur) cfg.synth.murmur_scale = *murmur;
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = generate_dataset(cfg.synth, c.out);
  std::size_t chd = 0, wavs = 0;
  for (const auto& e : ds.manifest.entries) {
    chd += e.label == Label::CHD;
    wavs += e.recordings.size();
  }
  log("synthesized " + std::to_string(ds.manifest.entries.size()) + " patients in " +
      std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  print({{"patients", ds.manifest.entries.size()},
         {"chd", chd},
         {"nonchd", ds.manifest.entries.size() - chd},
         {"wav_files", wavs},
         {"manifest", (fs::path(c.out) / "manifest.csv").string()},
         {"truth", (fs::path(c.out) / "truth.json").string()}});
  return 0;
}

int cmd_featurize(const Common& c, const std::string& manifest_path) {
  const auto cfg = resolve_config(c);
  const auto manifest = load_manifest(manifest_path);
  const auto t0 = std::chrono::steady_clock::now();
  const auto summary = featurize(manifest, c.out, cfg);
  archive_config(cfg, c.out);
  for (const auto& f : summary.failures) log("failed: " + f.path.string() + ": " + f.error);
  log("featurized " + std::to_string(summary.written) + "/" + std::to_string(summary.recordings) +
      " recordings (" + std::to_string(summary.imputed) + " with HRV imputation pending, " +
      std::to_string(summary.failures.size()) + " failures) in " +
      std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  print(to_json(summary));
  return summary.failures.empty() ? 0 : kExitData;
}

SplitAssignment make_split(const FeatureCache& cache, const PipelineConfig& cfg) {
  return split_patients(cache.manifest, cfg.split, cfg.seed);
}

std::optional<fs::path> opt_path(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<fs::path>(s);
}

int cmd_select(const Common& c, const std::string& features, const std::string& manifest,
               const std::string& split, std::optional<double> alpha) {
  auto cfg = resolve_config(c);
  if (!split.empty()) cfg.split = parse_ratios(split);
  if (alpha) cfg.alpha = *alpha;
  validate(cfg);
  const auto cache = load_feature_cache(features, opt_path(manifest));
  const auto sp = make_split(cache, cfg);
  const auto recs = collect_recordings(cache, sp.train);
  const auto result = select_on(recs, hrv_medians(recs), cfg.alpha);
  const json j = to_json(result);
  if (!c.out.empty()) {
    archive_config(cfg, c.out);
    detail::write_file_bytes(fs::path(c.out) / "selection.json", j.dump(2) + "\n");
  }
  print(j);
  return 0;
}

int cmd_train(const Common& c, const std::string& features, const std::string& manifest, const std::string& split) {
  auto cfg = resolve_config(c);
  if (!split.empty()) cfg.split = parse_ratios(split);
  validate(cfg);
  const auto cache = load_feature_cache(features, opt_path(manifest));
  const auto sp = make_split(cache, cfg);
  log("split " + std::to_string(sp.train.size()) + "/" + std::to_string(sp.validation.size()) + "/" +
      std::to_string(sp.test.size()) + " patients");
  const auto t0 = std::chrono::steady_clock::now();
  const auto outcome = train_classifier(cache, sp.train, sp.validation, cfg);
  log("trained " + std::to_string(outcome.history.epochs.size()) + " epochs in " +
      std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) +
      " s, best epoch " + std::to_string(outcome.history.best_epoch));

  save_checkpoint(outcome.classifier, c.out);
  archive_config(cfg, c.out);
  auto hist = to_json(outcome.history);
  hist["split"] = {{"train", sp.train.size()}, {"validation", sp.validation.size()}, {"test", sp.test.size()}};
  if (outcome.selection) hist["selection"] = to_json(*outcome.selection);
  detail::write_file_bytes(fs::path(c.out) / "history.json", hist.dump(2) + "\n");
  detail::write_file_bytes(fs::path(c.out) / "split.json", to_json(sp).dump(2) + "\n");
  print({{"model_dir", c.out}, {"epochs", outcome.history.epochs.size()}, {"best_epoch", outcome.history.best_epoch},
         {"split", hist["split"]}});
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& model, const std::string& features, const std::string& manifest,
                 const std::string& aggregate, const std::string& split_file, const std::string& subset) {
  const auto cfg = resolve_config(c);
  const auto methods = parse_methods(aggregate);
  const auto clf = load_checkpoint(model);
  const auto cache = load_feature_cache(features, opt_path(manifest));
  std::vector<std::string> ids;
  if (subset == "all") {
    for (const auto& e : cache.manifest.entries) ids.push_back(e.patient_id);
  } else {
    const fs::path sp_path = split_file.empty() ? fs::path(model) / "split.json" : fs::path(split_file);
    json sj;
    try {
      sj = json::parse(detail::read_file_bytes(sp_path));
    } catch (const json::exception& e) {
      fail(Errc::CorruptHeader, sp_path.string() + ": " + e.what());
    }
    const auto sp = split_from_json(sj);
    ids = subset == "train" ? sp.train : subset == "validation" ? sp.validation : sp.test;
  }
  const auto report = evaluate_patients(clf, cache, ids, methods, cfg.threshold);
  auto j = to_json(report);
  j["subset"] = subset;
  if (!c.out.empty()) {
    archive_config(cfg, c.out);
    detail::write_file_bytes(fs::path(c.out) / "report.json", j.dump(2) + "\n");
    for (const auto& m : report.methods)
      detail::write_file_bytes(fs::path(c.out) / ("curves_" + std::string(aggregation_name(m.method)) + ".csv"),
                               curves_csv(m));
  }
  print(j);
  return 0;
}

int cmd_predict(const Common& c, const std::string& model, const std::vector<std::string>& wavs, int age_months,
                const std::string& aggregate) {
  const auto cfg = resolve_config(c);
  const auto method = parse_aggregation(aggregate);
  const auto clf = load_checkpoint(model);
  const Featurizer fz(cfg);
  json files = json::array();
  std::vector<double> probs;
  double total_ms = 0.0;
  for (const auto& w : wavs) {
    const auto rec = fz.read(w);
    const auto t0 = std::chrono::steady_clock::now();
    const auto fb = fz.bundle(rec, age_months);
    const double p = predict_recording(clf, fb);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    total_ms += ms;
    probs.push_back(p);
    files.push_back({{"path", w}, {"prob_chd", p}, {"hrv_imputed", fb.quality_flag}, {"latency_ms", ms}});
  }
  const auto agg = aggregate_patient(probs, method, cfg.threshold);
  print({{"recordings", files},
         {"aggregation", aggregation_name(method)},
         {"aggregated_prob", agg.prob},
         {"decision", label_name(agg.decision)},
         {"mean_latency_ms", total_ms / static_cast<double>(wavs.size())}});
  return 0;
}

int cmd_cv(const Common& c, const std::string& features, const std::string& manifest, std::optional<std::size_t> k) {
  auto cfg = resolve_config(c);
  if (k) cfg.cv_folds = *k;
  validate(cfg);
  const auto cache = load_feature_cache(features, opt_path(manifest));
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = cross_validate(cache, cfg.cv_folds, cfg.seed, cfg);
  log("cross-validation finished in " +
      std::to_string(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) + " s");
  const auto j = to_json(rep);
  if (!c.out.empty()) {
    archive_config(cfg, c.out);
    detail::write_file_bytes(fs::path(c.out) / "cv.json", j.dump(2) + "\n");
  }
  print(j);
  return 0;
}

int cmd_ablate(const Common& c, const std::string& features, const std::string& manifest, const std::string& split,
               std::vector<std::string> groups) {
  auto cfg = resolve_config(c);
  if (!split.empty()) cfg.split = parse_ratios(split);
  validate(cfg);
  if (groups.empty()) groups = default_ablation_groups();
  const auto cache = load_feature_cache(features, opt_path(manifest));
  const auto sp = make_split(cache, cfg);
  const auto rows = ablate(cache, groups, sp, cfg);
  const json j = {{"split", {{"train", sp.train.size()}, {"validation", sp.validation.size()}, {"test", sp.test.size()}}},
                  {"rows", to_json(rows)}};
  if (!c.out.empty()) {
    archive_config(cfg, c.out);
    detail::write_file_bytes(fs::path(c.out) / "ablation.json", j.dump(2) + "\n");
  }
  print(j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phonocardiogram CHD screening pipeline"};
  app.require_subcommand(1);

  Common synth_c, feat_c, sel_c, train_c, eval_c, pred_c, cv_c, abl_c;
  std::optional<std::size_t> n_patients, folds;
  std::optional<double> chd_ratio, murmur, alpha;
  std::string manifest, features, split, model, aggregate = "average", split_file, subset = "test";
  std::vector<std::string> wavs, groups;
  int age_months = 60;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort");
  add_common(synth, synth_c, true);
  synth->add_option("--n-patients", n_patients, "Number of patients");
  synth->add_option("--chd-ratio", chd_ratio, "Fraction of CHD patients");
  synth->add_option("--murmur-scale", murmur, "Murmur amplitude scale (0 = negative control)");

  auto* feat = app.add_subcommand("featurize", "Compute MFCC and handcrafted features");
  add_common(feat, feat_c, true);
  feat->add_option("--manifest", manifest, "Manifest CSV")->required();

  const auto add_feature_inputs = [&](CLI::App* cmd) {
    cmd->add_option("--features", features, "Feature cache directory")->required();
    cmd->add_option("--manifest", manifest, "Manifest overriding the cache copy");
  };

  auto* sel = app.add_subcommand("select-features", "Mann-Whitney screen on the training split");
  add_common(sel, sel_c, false);
  add_feature_inputs(sel);
  sel->add_option("--split", split, "Ratios train,validation,test");
  sel->add_option("--alpha", alpha, "Significance level");

  auto* tr = app.add_subcommand("train", "Train a classifier");
  add_common(tr, train_c, true);
  add_feature_inputs(tr);
  tr->add_option("--split", split, "Ratios train,validation,test");

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on held-out patients");
  add_common(ev, eval_c, false);
  add_feature_inputs(ev);
  ev->add_option("--model", model, "Checkpoint directory")->required();
  ev->add_option("--aggregate", aggregate, "average | majority | at-least-one | all");
  ev->add_option("--split-file", split_file, "SplitAssignment JSON (default: <model>/split.json)");
  ev->add_option("--subset", subset, "test | validation | train | all")
      ->check(CLI::IsMember({"test", "validation", "train", "all"}));

  auto* pr = app.add_subcommand("predict", "Score one patient's WAV files");
  add_common(pr, pred_c, false);
  pr->add_option("--model", model, "Checkpoint directory")->required();
  pr->add_option("--age-months", age_months, "Patient age in months");
  pr->add_option("--aggregate", aggregate, "average | majority | at-least-one");
  pr->add_option("wavs", wavs, "WAV files")->required();

  auto* cv = app.add_subcommand("cv", "Patient-wise k-fold cross-validation");
  add_common(cv, cv_c, false);
  add_feature_inputs(cv);
  cv->add_option("--folds", folds, "Number of folds");

  auto* ab = app.add_subcommand("ablate", "Feature-group ablation on a fixed split");
  add_common(ab, abl_c, false);
  add_feature_inputs(ab);
  ab->add_option("--split", split, "Ratios train,validation,test");
  ab->add_option("--groups", groups, "Groups such as all, mfcc, hrv, spectral, mfcc+hrv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(synth_c, n_patients, chd_ratio, murmur);
    if (*feat) return cmd_featurize(feat_c, manifest);
    if (*sel) return cmd_select(sel_c, features, manifest, split, alpha);
    if (*tr) return cmd_train(train_c, features, manifest, split);
    if (*ev) return cmd_evaluate(eval_c, model, features, manifest, aggregate, split_file, subset);
    if (*pr) return cmd_predict(pred_c, model, wavs, age_months, aggregate);
    if (*cv) return cmd_cv(cv_c, features, manifest, folds);
    if (*ab) return cmd_ablate(abl_c, features, manifest, split, groups);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_config_error(e.code()) ? kExitConfig : kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
