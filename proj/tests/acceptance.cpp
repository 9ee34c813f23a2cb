// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
//   pcgscreen_acceptance [work_dir]
//
// Without work_dir the artifacts go to a temporary directory that is removed
// afterwards.

#include <sys/wait.h>

#include <bit>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "mfcc_oracle.hpp"
#include "pcgscreen/pcgscreen.hpp"
#include "test_util.hpp"

using namespace pcgscreen;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Result {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path g_work;

int cli(const std::string& args, const fs::path& stdout_file = "/dev/null") {
  const std::string cmd = std::string(PCGSCREEN_CLI) + " " + args + " > " + stdout_file.string() + " 2>>" +
                          (g_work / "cli.log").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void must(int rc, const std::string& what) {
  if (rc != 0) throw std::runtime_error(what + " exited with " + std::to_string(rc));
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(detail::read_file_bytes(p)); }

// ---------------------------------------------------------------------------

Result mfcc_oracle() {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = testutil::test_signal(rng, 4000);
    const auto fast = compute_mfcc(x);
    const auto ref = testutil::brute_mfcc(x, MfccConfig{}.n_filters);
    if (fast.rows() != ref.rows() || fast.cols() != ref.cols()) return {false, "shape mismatch"};
    for (std::size_t k = 0; k < ref.data().size(); ++k) worst = std::max(worst, std::abs(fast.data()[k] - ref.data()[k]));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 60.0, fmt("max |diff| %.3g over 100 signals, %.1f s", worst, secs)};
}

Result butterworth() {
  const double fs = 4000.0;
  const auto fc = design_butterworth_bandpass(4, 25.0, 400.0, fs);
  const auto gain_db = [&](double f) {
    const auto y = filter_signal(fc, testutil::sine(f, fs, 160000));
    const std::size_t n = 8000;
    double s = 0, c = 0;
    for (std::size_t i = y.size() - n; i < y.size(); ++i) {
      const double ph = 2.0 * std::numbers::pi * f * double(i) / fs;
      s += y[i] * std::sin(ph);
      c += y[i] * std::cos(ph);
    }
    return 20.0 * std::log10(2.0 * std::hypot(s, c) / double(n));
  };
  const double g25 = gain_db(25), g100 = gain_db(100), g400 = gain_db(400);
  const auto dc = filter_signal(fc, std::vector<double>(40000, 1.0));
  double tail = 0;
  for (std::size_t i = 20000; i < dc.size(); ++i) tail = std::max(tail, std::abs(dc[i]));
  const bool ok = std::abs(g25 + 3.01) <= 0.5 && std::abs(g100) <= 0.1 && std::abs(g400 + 3.01) <= 0.5 && tail < 1e-6;
  return {ok, fmt("gains %.3f / %.4f / %.3f dB, DC tail %.2g", g25, g100, g400, tail)};
}

Result gradient() {
  const auto t0 = Clock::now();
  Rng rng(99);
  const auto net = init_model(ModelConfig{}, 17);
  const auto b = testutil::random_batch(net.config, 4, 64, rng);
  const auto rep = testutil::gradient_check(net, b.samples, {1.25, 0.8}, 200, rng);
  const double secs = seconds_since(t0);
  return {rep.checked >= 200 && rep.max_rel_error < 1e-4 && secs < 30.0,
          fmt("%zu params checked (%zu skipped at ReLU kinks), max rel err %.3g, %.1f s", rep.checked, rep.skipped,
              rep.max_rel_error, secs)};
}

double enumerated_p(std::size_t na, std::size_t nb, double u_obs) {
  const std::size_t n = na + nb;
  double le = 0, ge = 0, total = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (std::size_t(std::popcount(mask)) != na) continue;
    double rank_sum = 0;
    for (std::size_t r = 0; r < n; ++r)
      if (mask >> r & 1u) rank_sum += double(r + 1);
    const double u = rank_sum - double(na * (na + 1)) / 2.0;
    total += 1;
    le += u <= u_obs;
    ge += u >= u_obs;
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / total);
}

Result mann_whitney() {
  Rng rng(314);
  double worst = 0;
  bool sums = true;
  int cases = 0;
  for (; cases < 600; ++cases) {
    const std::size_t na = 1 + rng.index(12);
    const std::size_t nb = 1 + rng.index(14 - na);
    std::vector<double> pool(na + nb);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = double(i) + rng.uniform(0.0, 0.5);
    rng.shuffle(std::span<double>(pool));
    const std::vector<double> a(pool.begin(), pool.begin() + long(na)), b(pool.begin() + long(na), pool.end());
    const auto ra = mann_whitney_u(a, b), rb = mann_whitney_u(b, a);
    if (!ra.exact) return {false, "exact path not taken"};
    worst = std::max(worst, std::abs(ra.p - enumerated_p(na, nb, ra.u)));
    sums = sums && ra.u + rb.u == double(na * nb);
  }
  for (int t = 0; t < 1000; ++t) {  // with ties and larger samples
    std::vector<double> a(1 + rng.index(40)), b(1 + rng.index(40));
    for (auto& v : a) v = double(rng.index(5));
    for (auto& v : b) v = double(rng.index(5));
    sums = sums && mann_whitney_u(a, b).u + mann_whitney_u(b, a).u == double(a.size() * b.size());
  }
  return {worst <= 1e-9 && sums, fmt("%d tie-free cases, max |p - enum| %.3g, U sums %s", cases, worst,
                                     sums ? "exact" : "BROKEN")};
}

Result auroc_identity() {
  Rng rng(271);
  double worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.index(100);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = int(rng.index(2));
      s[i] = t % 2 ? double(rng.index(6)) : rng.uniform();
    }
    y[0] = 1;
    y[1] = 0;
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < n; ++i) (y[i] ? pos : neg).push_back(s[i]);
    const double u = mann_whitney_u(pos, neg).u;
    worst = std::max(worst, std::abs(roc_auroc(s, y).auroc - u / double(pos.size() * neg.size())));
  }
  return {worst <= 1e-12, fmt("1000 sets, max |auroc - U/(n1 n2)| %.3g", worst)};
}

Result aggregation() {
  const std::vector<double> p{0.9, 0.2, 0.2, 0.2};
  const auto one = aggregate_patient(p, Aggregation::AtLeastOne);
  const auto maj = aggregate_patient(p, Aggregation::Majority);
  const auto avg = aggregate_patient(p, Aggregation::AverageProb);
  const bool example = one.decision == Label::CHD && maj.decision == Label::NonCHD &&
                       avg.decision == Label::NonCHD && std::abs(avg.prob - 0.375) < 1e-15;
  Rng rng(5);
  int violations = 0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<double> q(1 + rng.index(4));
    for (auto& v : q) v = rng.uniform();
    const bool o = aggregate_patient(q, Aggregation::AtLeastOne).decision == Label::CHD;
    const bool m = aggregate_patient(q, Aggregation::Majority).decision == Label::CHD;
    const bool a = aggregate_patient(q, Aggregation::AverageProb).decision == Label::CHD;
    violations += (m && !o) || (a && !o);
  }
  return {example && violations == 0,
          fmt("example %s (avg %.3f), dominance violations %d / 10000", example ? "ok" : "WRONG", avg.prob, violations)};
}

struct MainRun {
  fs::path data, feat, model;
  double seconds = 0;
  nlohmann::json report;
};
std::unique_ptr<MainRun> g_main;

Result end_to_end() {
  auto run = std::make_unique<MainRun>();
  run->data = g_work / "synth42";
  run->feat = g_work / "feat42";
  run->model = g_work / "model42";
  const auto t0 = Clock::now();
  must(cli("synth --seed 42 --n-patients 200 --chd-ratio 0.6 --out " + run->data.string()), "synth");
  must(cli("featurize --manifest " + (run->data / "manifest.csv").string() + " --out " + run->feat.string()),
       "featurize");
  must(cli("train --features " + run->feat.string() + " --out " + run->model.string()), "train");
  const auto report_path = g_work / "eval42.json";
  must(cli("evaluate --features " + run->feat.string() + " --model " + run->model.string() + " --aggregate average",
           report_path),
       "evaluate");
  run->seconds = seconds_since(t0);
  run->report = read_json(report_path);
  const auto& avg = run->report["methods"]["average"];
  const double auroc = avg["auroc"].is_null() ? 0.0 : avg["auroc"].get<double>();
  const double acc = avg["accuracy"].is_null() ? 0.0 : avg["accuracy"].get<double>();

  // Negative control: a murmur-free cohort from an unseen seed, scored by the
  // trained model. Audio carries no label information there.
  const auto neg_data = g_work / "synth_neg", neg_feat = g_work / "feat_neg";
  must(cli("synth --seed 43 --n-patients 400 --chd-ratio 0.6 --murmur-scale 0 --out " + neg_data.string()),
       "synth (negative control)");
  must(cli("featurize --manifest " + (neg_data / "manifest.csv").string() + " --out " + neg_feat.string()),
       "featurize (negative control)");
  const auto neg_path = g_work / "eval_neg.json";
  must(cli("evaluate --features " + neg_feat.string() + " --model " + run->model.string() +
               " --aggregate average --subset all",
           neg_path),
       "evaluate (negative control)");
  const double neg_auroc = read_json(neg_path)["methods"]["average"]["auroc"].get<double>();

  const bool ok = auroc >= 0.90 && acc >= 0.85 && std::abs(neg_auroc - 0.5) <= 0.08 && run->seconds <= 600.0;
  const auto detail = fmt("test AUROC %.4f, accuracy %.4f (%d patients), negative-control AUROC %.4f (400 patients), "
                          "pipeline %.0f s",
                          auroc, acc, run->report["n_patients"].get<int>(), neg_auroc, run->seconds);
  g_main = std::move(run);
  return {ok, detail};
}

Result latency() {
  if (!g_main) return {false, "needs the end-to-end run"};
  const PipelineConfig cfg;
  const Featurizer fz(cfg);
  const auto clf = load_checkpoint(g_main->model);
  const auto manifest = load_manifest(g_main->data / "manifest.csv");
  std::vector<double> ms;
  for (std::size_t i = 0; i < 10; ++i)
    for (const auto& [site, path] : manifest.entries[i].recordings) {
      if (ms.size() >= 20) break;
      const auto t0 = Clock::now();
      const auto rec = fz.read(path);
      const double p = predict_recording(clf, fz.bundle(rec, manifest.entries[i].age_months));
      ms.push_back(seconds_since(t0) * 1000.0);
      if (!(p >= 0 && p <= 1)) return {false, "probability out of range"};
    }
  const auto [mean, sd] = mean_sd(ms);
  const double worst = *std::max_element(ms.begin(), ms.end());
  return {mean <= 440.0, fmt("mean %.1f ms (sd %.1f, max %.1f) over %zu recordings of 15 s; stretch 100 ms %s", mean,
                             sd, worst, ms.size(), mean <= 100.0 ? "met" : "missed")};
}

Result hrv() {
  const std::vector<double> nn{400, 500, 600};
  const auto h = hrv_from_intervals(nn);
  const bool exact = h.mean_nn_ms == 500 && h.sdnn_ms == 100 && h.rmssd_ms == 100 && h.nn50_count == 2 &&
                     h.pnn50_pct == 100 && h.triangular_index == 3;
  std::vector<double> truth;
  const auto fc = design_butterworth_bandpass(4, 25.0, 400.0, 4000.0);
  const auto x = preprocess(testutil::click_train(4000.0, 15.0, truth), fc);
  const auto bt = detect_beats(x, 4000.0, 60);
  double worst = 0;
  for (double t : truth) {
    double best = 1e9;
    for (double d : bt.times_s) best = std::min(best, std::abs(d - t));
    worst = std::max(worst, best);
  }
  const bool beats = bt.times_s.size() == truth.size() && worst <= 0.010;
  return {exact && beats, fmt("hand example %s; click train %zu/%zu beats, worst offset %.2f ms, HR %.2f bpm",
                              exact ? "exact" : "WRONG", bt.times_s.size(), truth.size(), worst * 1000.0,
                              bt.estimated_hr_bpm)};
}

Result split_cv() {
  PatientManifest m;
  for (std::size_t i = 0; i < 751; ++i) {
    PatientEntry e;
    e.patient_id = "D" + std::to_string(i);
    e.label = i < 473 ? Label::CHD : Label::NonCHD;
    e.recordings[Site::AV] = "unused.wav";
    m.entries.push_back(e);
  }
  const auto s = split_patients(m, {0.7, 0.2, 0.1}, 42);
  const bool counts = s.train.size() == 526 && s.validation.size() == 150 && s.test.size() == 75;
  const auto folds = make_folds(m, 5, 42);
  std::map<std::string, int> seen;
  for (const auto& f : folds)
    for (const auto& id : f) ++seen[id];
  bool partition = seen.size() == 751;
  for (const auto& [id, c] : seen) partition = partition && c == 1;
  const bool repeat = split_patients(m, {0.7, 0.2, 0.1}, 42) == s && make_folds(m, 5, 42) == folds;
  return {counts && partition && repeat, fmt("split %zu/%zu/%zu, folds cover %zu patients once each: %s, reruns %s",
                                             s.train.size(), s.validation.size(), s.test.size(), seen.size(),
                                             partition ? "yes" : "NO", repeat ? "identical" : "DIFFER")};
}

// Every regular file under a, compared byte for byte with its twin under b.
bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files, std::string& diff) {
  std::set<fs::path> rel_a, rel_b;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) rel_a.insert(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) rel_b.insert(fs::relative(e.path(), b));
  if (rel_a != rel_b) {
    diff = a.filename().string() + ": file lists differ";
    return false;
  }
  for (const auto& r : rel_a) {
    ++files;
    if (detail::read_file_bytes(a / r) != detail::read_file_bytes(b / r)) {
      diff = (a.filename() / r).string();
      return false;
    }
  }
  return true;
}

Result determinism() {
  const auto d = g_work / "determinism";
  fs::create_directories(d);
  PipelineConfig cfg;
  cfg.synth.n_patients = 24;
  cfg.train.max_epochs = 8;
  const auto cfg_path = d / "config.json";
  detail::write_file_bytes(cfg_path, to_json(cfg).dump(2) + "\n");
  const std::string c = " --config " + cfg_path.string() + " --seed 7";
  for (const char* run : {"a", "b"}) {
    const auto r = d / run;
    must(cli("synth" + c + " --out " + (r / "synth").string()), "synth");
    // Both runs featurize the same manifest so paths inside outputs match.
    must(cli("featurize" + c + " --manifest " + (d / "a" / "synth" / "manifest.csv").string() + " --out " +
             (r / "feat").string()),
         "featurize");
    must(cli("train" + c + " --features " + (d / "a" / "feat").string() + " --out " + (r / "model").string()), "train");
    must(cli("evaluate" + c + " --features " + (d / "a" / "feat").string() + " --model " +
                 (d / "a" / "model").string() + " --aggregate all --out " + (r / "eval").string(),
             r / "eval_stdout.json"),
         "evaluate");
  }
  std::size_t files = 0;
  std::string diff;
  bool ok = true;
  for (const char* stage : {"synth", "feat", "model", "eval"}) ok = ok && same_tree(d / "a" / stage, d / "b" / stage, files, diff);
  ok = ok && detail::read_file_bytes(d / "a" / "eval_stdout.json") == detail::read_file_bytes(d / "b" / "eval_stdout.json");
  return {ok, ok ? fmt("synth, featurize, train, evaluate: %zu files byte-identical across two runs", files)
                 : "first difference: " + diff};
}

}  // namespace

int main(int argc, char** argv) {
  std::unique_ptr<testutil::TempDir> tmp;
  if (argc > 1) {
    g_work = argv[1];
    fs::remove_all(g_work);
    fs::create_directories(g_work);
  } else {
    tmp = std::make_unique<testutil::TempDir>("acceptance");
    g_work = tmp->path();
  }

  const std::vector<std::pair<const char*, std::function<Result()>>> checks = {
      {"mfcc-oracle-equivalence", mfcc_oracle},
      {"butterworth-response", butterworth},
      {"gradient-fidelity", gradient},
      {"mann-whitney-exactness", mann_whitney},
      {"auroc-u-identity", auroc_identity},
      {"aggregation-hand-checks", aggregation},
      {"synthetic-end-to-end", end_to_end},
      {"prediction-latency", latency},
      {"hrv-exactness", hrv},
      {"split-cv-hygiene", split_cv},
      {"determinism-suite", determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : checks) {
    Result r;
    const auto t0 = Clock::now();
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += !r.pass;
    std::cout << (r.pass ? "PASS " : "FAIL ") << name << ": " << r.detail << fmt(" [%.1f s]", seconds_since(t0))
              << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << checks.size() - std::size_t(failed) << "/" << checks.size()
            << std::endl;
  return failed ? 1 : 0;
}
