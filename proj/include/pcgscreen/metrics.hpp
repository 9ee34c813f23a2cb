#pragma once

// Patient-level aggregation and classification metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pcgscreen/audio_io.hpp"
#include "pcgscreen/common.hpp"

namespace pcgscreen {

enum class Aggregation { AtLeastOne, Majority, AverageProb };

inline constexpr std::array<Aggregation, 3> kAllAggregations = {Aggregation::AtLeastOne, Aggregation::Majority,
                                                                Aggregation::AverageProb};

constexpr std::string_view aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::AtLeastOne: return "at-least-one";
    case Aggregation::Majority: return "majority";
    case Aggregation::AverageProb: return "average";
  }
  return "?";
}

inline Aggregation parse_aggregation(std::string_view s) {
  for (auto a : kAllAggregations)
    if (s == aggregation_name(a)) return a;
  fail(Errc::InvalidArgument, "unknown aggregation '" + std::string(s) + "'");
}

struct AggregateResult {
  double prob = 0.0;
  Label decision = Label::NonCHD;
};

/// AtLeastOne: max prob, CHD iff any prob >= threshold.
/// Majority: fraction of positive recordings, CHD iff strictly more than half.
/// AverageProb: mean prob, CHD iff mean >= threshold.
inline AggregateResult aggregate_patient(std::span<const double> probs, Aggregation method, double threshold = 0.5) {
  if (probs.empty()) fail(Errc::NoRecordings, "patient has no recordings");
  const auto n = static_cast<double>(probs.size());
  const auto positives = static_cast<double>(
      std::count_if(probs.begin(), probs.end(), [&](double p) { return p >= threshold; }));
  AggregateResult r;
  switch (method) {
    case Aggregation::AtLeastOne:
      r.prob = *std::max_element(probs.begin(), probs.end());
      r.decision = positives > 0 ? Label::CHD : Label::NonCHD;
      break;
    case Aggregation::Majority:
      r.prob = positives / n;
      r.decision = positives > n / 2.0 ? Label::CHD : Label::NonCHD;
      break;
    case Aggregation::AverageProb:
      r.prob = std::accumulate(probs.begin(), probs.end(), 0.0) / n;
      r.decision = r.prob >= threshold ? Label::CHD : Label::NonCHD;
      break;
  }
  return r;
}

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

/// Undefined entries (zero denominators) are left empty.
struct ConfusionMetrics {
  ConfusionCounts counts;
  std::optional<double> accuracy, sensitivity, specificity, f1;
};

inline ConfusionMetrics metrics_from_counts(const ConfusionCounts& c) {
  const auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  ConfusionMetrics m;
  m.counts = c;
  m.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

/// decisions and labels are 1 for CHD, 0 otherwise.
inline ConfusionMetrics confusion_metrics(std::span<const int> decisions, std::span<const int> labels) {
  if (decisions.size() != labels.size()) fail(Errc::LengthMismatch, "decisions vs labels");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = decisions[i] != 0, truth = labels[i] != 0;
    if (pred && truth) ++c.tp;
    else if (!pred && !truth) ++c.tn;
    else if (pred) ++c.fp;
    else ++c.fn;
  }
  return metrics_from_counts(c);
}

/// Throws UndefinedMetric for an empty optional.
inline double require(const std::optional<double>& m, std::string_view name) {
  if (!m) fail(Errc::UndefinedMetric, std::string(name) + " is undefined (zero denominator)");
  return *m;
}

struct RocResult {
  std::vector<std::pair<double, double>> points;  // (FPR, TPR), starting at (0, 0)
  double auroc = 0.0;
};

struct PrResult {
  std::vector<std::pair<double, double>> points;  // (recall, precision), starting at (0, 1)
  double auprc = 0.0;
};

namespace detail {

/// Walks distinct score thresholds from high to low, calling
/// visit(tp, fp) with cumulative counts after each tie group.
template <typename F>
void sweep_thresholds(std::span<const double> scores, std::span<const int> labels, F&& visit) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] != 0 ? tp : fp) += 1;
      ++j;
    }
    visit(tp, fp);
    i = j;
  }
}

inline std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l != 0; }));
  return {pos, labels.size() - pos};
}

}  // namespace detail

/// ROC over distinct thresholds; trapezoidal area, so tied scores count half.
inline RocResult roc_auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(Errc::LengthMismatch, "scores vs labels");
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos == 0 || neg == 0) fail(Errc::SingleClassOnly, "ROC needs both classes");
  RocResult r;
  r.points.emplace_back(0.0, 0.0);
  double twice_area = 0.0;  // in units of (pairs)
  std::size_t prev_tp = 0, prev_fp = 0;
  detail::sweep_thresholds(scores, labels, [&](std::size_t tp, std::size_t fp) {
    twice_area += static_cast<double>(fp - prev_fp) * static_cast<double>(tp + prev_tp);
    prev_tp = tp;
    prev_fp = fp;
    r.points.emplace_back(static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos));
  });
  r.auroc = twice_area / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return r;
}

/// Precision-recall over distinct thresholds; area is the step-wise sum
/// sum_k (R_k - R_{k-1}) P_k with no interpolation.
inline PrResult pr_auprc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(Errc::LengthMismatch, "scores vs labels");
  const auto [pos, neg] = detail::class_counts(labels);
  if (pos == 0) fail(Errc::NoPositives, "PR curve needs at least one positive");
  PrResult r;
  r.points.emplace_back(0.0, 1.0);
  double prev_recall = 0.0;
  detail::sweep_thresholds(scores, labels, [&](std::size_t tp, std::size_t fp) {
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.auprc += (recall - prev_recall) * precision;
    prev_recall = recall;
    r.points.emplace_back(recall, precision);
  });
  return r;
}

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const ConfusionMetrics& m) {
  return {{"counts", {{"TP", m.counts.tp}, {"TN", m.counts.tn}, {"FP", m.counts.fp}, {"FN", m.counts.fn}}},
          {"accuracy", optional_json(m.accuracy)},
          {"sensitivity", optional_json(m.sensitivity)},
          {"specificity", optional_json(m.specificity)},
          {"f1", optional_json(m.f1)}};
}

/// Mean and sample standard deviation.
inline std::pair<double, double> mean_sd(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace pcgscreen
