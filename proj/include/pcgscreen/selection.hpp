#pragma once

// Mann-Whitney U test and p-value based feature screening.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcgscreen/audio_io.hpp"
#include "pcgscreen/common.hpp"

namespace pcgscreen {

struct MwuOptions {
  std::size_t exact_max_total = 14;  // exact null distribution when n_a + n_b <= this and no ties
  double continuity = 0.5;
};

struct MwuResult {
  double u = 0.0;  // U for sample a: #(a > b) + 0.5 #(a == b)
  double p = 1.0;  // two-sided
  bool exact = false;
};

/// Null distribution counts of U for sample sizes (m, n) without ties:
/// entry u is the number of rank splits giving U = u. Built from the
/// recurrence N(m, n; u) = N(m - 1, n; u - n) + N(m, n - 1; u).
inline std::vector<double> mwu_null_counts(std::size_t m, std::size_t n) {
  // row[j] holds counts for (i, j) as i advances.
  std::vector<std::vector<double>> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = {1.0};  // i = 0: U = 0 only
  for (std::size_t i = 1; i <= m; ++i) {
    cur[0] = {1.0};
    for (std::size_t j = 1; j <= n; ++j) {
      std::vector<double> c(i * j + 1, 0.0);
      for (std::size_t u = 0; u < prev[j].size(); ++u) c[u + j] += prev[j][u];
      for (std::size_t u = 0; u < cur[j - 1].size(); ++u) c[u] += cur[j - 1][u];
      cur[j] = std::move(c);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

namespace detail {

inline double normal_sf_two_sided(double z) { return std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

inline MwuResult mann_whitney_u(std::span<const double> a, std::span<const double> b, const MwuOptions& opts = {}) {
  if (a.empty() || b.empty()) fail(Errc::EmptySample, "Mann-Whitney needs two non-empty samples");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;

  std::vector<std::pair<double, int>> pooled;
  pooled.reserve(n);
  for (double v : a) pooled.emplace_back(v, 0);
  for (double v : b) pooled.emplace_back(v, 1);
  std::sort(pooled.begin(), pooled.end(), [](const auto& x, const auto& y) { return x.first < y.first; });

  double rank_sum_a = 0.0, tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].second == 0) rank_sum_a += avg_rank;
    if (j - i > 1) {
      ties = true;
      tie_term += t * t * t - t;
    }
    i = j;
  }

  MwuResult r;
  const double dna = static_cast<double>(na), dnb = static_cast<double>(nb), dn = static_cast<double>(n);
  r.u = rank_sum_a - dna * (dna + 1.0) / 2.0;

  if (!ties && n <= opts.exact_max_total) {
    const auto counts = mwu_null_counts(na, nb);
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const auto u = static_cast<std::size_t>(std::llround(r.u));
    double le = 0.0, ge = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (k <= u) le += counts[k];
      if (k >= u) ge += counts[k];
    }
    r.p = std::min(1.0, 2.0 * std::min(le, ge) / total);
    r.exact = true;
    return r;
  }

  const double mu = dna * dnb / 2.0;
  const double var = dna * dnb / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (!(var > 0.0)) {
    r.p = 1.0;
    return r;
  }
  const double z = std::max(0.0, std::abs(r.u - mu) - opts.continuity) / std::sqrt(var);
  r.p = std::min(1.0, detail::normal_sf_two_sided(z));
  return r;
}

// ---------------------------------------------------------------------------
// Feature selection
// ---------------------------------------------------------------------------

struct FeatureTable {
  Matrix<double> values;  // one row per recording, one column per feature
  std::vector<Label> labels;
  std::vector<std::string> feature_names;
};

struct FeatureTest {
  std::string feature;
  double u = 0.0;
  double p = 1.0;
  bool selected = false;
};

struct SelectionResult {
  std::vector<FeatureTest> tests;
  double alpha = 0.05;
};

/// Tests CHD against NonCHD values for each column; selected iff p < alpha.
inline SelectionResult select_features(const FeatureTable& table, double alpha = 0.05) {
  if (table.values.rows() != table.labels.size()) fail(Errc::LengthMismatch, "rows vs labels");
  if (table.values.cols() != table.feature_names.size()) fail(Errc::LengthMismatch, "columns vs names");
  SelectionResult out;
  out.alpha = alpha;
  for (std::size_t f = 0; f < table.values.cols(); ++f) {
    std::vector<double> chd, non;
    for (std::size_t i = 0; i < table.values.rows(); ++i) {
      const double v = table.values(i, f);
      if (!std::isfinite(v)) fail(Errc::InvalidArgument, "non-finite value in " + table.feature_names[f]);
      (table.labels[i] == Label::CHD ? chd : non).push_back(v);
    }
    if (chd.empty() || non.empty()) fail(Errc::SingleClassOnly, "both classes are required");
    const auto r = mann_whitney_u(chd, non);
    out.tests.push_back({table.feature_names[f], r.u, r.p, r.p < alpha});
  }
  return out;
}

inline nlohmann::json to_json(const SelectionResult& s) {
  auto arr = nlohmann::json::array();
  for (const auto& t : s.tests) arr.push_back({{"feature", t.feature}, {"U", t.u}, {"p", t.p}, {"selected", t.selected}});
  return arr;
}

}  // namespace pcgscreen
