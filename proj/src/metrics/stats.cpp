// Copyright 2026 The retinavl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "retinavl/metrics/stats.hpp"

#include "retinavl/core/error.hpp"

#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace retinavl::metrics {

double sorted_quantile(const std::vector<double>& sorted, double q) {
  RVL_CHECK(!sorted.empty(), UndefinedMetricError, "quantile of empty set");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace {

// Resampling plan: rows grouped into units; a resample draws units with replacement.
struct Units {
  std::vector<std::vector<Eigen::Index>> rows;
};

Units make_units(const ScoreSet& set, bool by_id) {
  Units u;
  if (!by_id) {
    u.rows.resize(static_cast<std::size_t>(set.size()));
    for (Eigen::Index i = 0; i < set.size(); ++i) u.rows[static_cast<std::size_t>(i)] = {i};
    return u;
  }
  RVL_CHECK(static_cast<Eigen::Index>(set.ids.size()) == set.size(), ValidationError,
            "id-level bootstrap needs an id per row");
  // std::map orders units by id, which makes the draw independent of row order.
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (Eigen::Index i = 0; i < set.size(); ++i) groups[set.ids[static_cast<std::size_t>(i)]].push_back(i);
  for (auto& [id, rows] : groups) u.rows.push_back(std::move(rows));
  return u;
}

std::vector<Eigen::Index> draw(const Units& units, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, units.rows.size() - 1);
  std::vector<Eigen::Index> rows;
  for (std::size_t k = 0; k < units.rows.size(); ++k) {
    const auto& unit = units.rows[pick(rng)];
    rows.insert(rows.end(), unit.begin(), unit.end());
  }
  return rows;
}

}  // namespace

StatReport bootstrap_ci(const Metric& metric, const ScoreSet& set, const BootstrapOptions& opts) {
  RVL_CHECK(opts.n_resamples > 0, ConfigError, "bootstrap needs at least one resample");
  RVL_CHECK(opts.level > 0 && opts.level < 1, ConfigError, "confidence level must be in (0, 1)");
  RVL_CHECK(set.size() > 0, UndefinedMetricError, "bootstrap on empty set");
  StatReport rep;
  rep.point = metric(set);
  rep.n_resamples = opts.n_resamples;
  rep.seed = opts.seed;
  rep.n = static_cast<long>(set.size());

  const Units units = make_units(set, opts.by_id);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(opts.n_resamples));
  int undefined = 0;
  std::string last_failure;
  for (int r = 0; r < opts.n_resamples; ++r) {
    const auto rows = draw(units, derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
    try {
      values.push_back(metric(set.select(rows)));
    } catch (const UndefinedMetricError& e) {
      ++undefined;
      last_failure = e.what();
    }
  }
  if (2 * undefined > opts.n_resamples)
    throw UndefinedMetricError("metric undefined on " + std::to_string(undefined) + " of " +
                               std::to_string(opts.n_resamples) + " resamples: " + last_failure);
  std::sort(values.begin(), values.end());
  const double alpha = 1.0 - opts.level;
  rep.ci_low = std::min(sorted_quantile(values, alpha / 2), rep.point);
  rep.ci_high = std::max(sorted_quantile(values, 1.0 - alpha / 2), rep.point);
  return rep;
}

BootstrapComparison bootstrap_pvalue(const Metric& metric, const ScoreSet& a, const ScoreSet& b,
                                     const BootstrapOptions& opts) {
  RVL_CHECK(a.size() == b.size(), ValidationError, "paired bootstrap needs equal sizes");
  RVL_CHECK(a.ids == b.ids, ValidationError, "paired bootstrap needs identical ids");
  RVL_CHECK(opts.n_resamples > 0, ConfigError, "bootstrap needs at least one resample");
  BootstrapComparison out;
  out.point_a = metric(a);
  out.point_b = metric(b);
  out.a_is_better = out.point_a >= out.point_b;

  const Units units = make_units(a, opts.by_id);
  int valid = 0;
  for (int r = 0; r < opts.n_resamples; ++r) {
    const auto rows = draw(units, derive_seed(opts.seed, static_cast<std::uint64_t>(r)));
    double ma = 0, mb = 0;
    try {
      ma = metric(a.select(rows));
      mb = metric(b.select(rows));
    } catch (const UndefinedMetricError&) {
      continue;
    }
    ++valid;
    const double better = out.a_is_better ? ma : mb;
    const double other = out.a_is_better ? mb : ma;
    if (!(better > other)) ++out.not_better;
  }
  if (2 * valid < opts.n_resamples)
    throw UndefinedMetricError("metric undefined on most paired resamples");
  out.p_value = std::min(1.0, 2.0 * out.not_better / static_cast<double>(valid));
  return out;
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const Eigen::Array<double, 1, 1> aa(a), bb(b), xx(x);
  return Eigen::betainc(aa, bb, xx)(0);
}

double student_t_two_sided(double t, double dof) {
  if (!std::isfinite(t)) return 0.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

TTestResult t_test_two_sided(const Vector& a, const Vector& b) {
  RVL_CHECK(a.size() >= 2 && b.size() >= 2, ValidationError, "t-test needs at least two values per side");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = a.mean();
  const double mb = b.mean();
  const double ssa = (a.array() - ma).square().sum();
  const double ssb = (b.array() - mb).square().sum();
  TTestResult res;
  res.dof = na + nb - 2.0;
  const double pooled = (ssa + ssb) / res.dof;
  const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
  if (se == 0.0) {
    res.t = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    res.p_value = ma == mb ? 1.0 : 0.0;
    return res;
  }
  res.t = (ma - mb) / se;
  res.p_value = student_t_two_sided(res.t, res.dof);
  return res;
}

double binomial_half_cdf(long k, long n) {
  if (k < 0) return 0.0;
  if (k >= n) return 1.0;
  if (n <= 1000) {
    // Exact while the coefficients fit in 53 bits; ldexp is exact.
    double total = 0.0;
    double c = 1.0;
    for (long i = 0; i <= k; ++i) {
      total += c;
      c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
    }
    return std::min(std::ldexp(total, static_cast<int>(-n)), 1.0);
  }
  double total = 0.0;
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  for (long i = 0; i <= k; ++i) {
    const double log_c = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0);
    total += std::exp(log_c + log_half_n);
  }
  return std::min(total, 1.0);
}

McNemarResult mcnemar(const std::vector<bool>& pre_correct, const std::vector<bool>& post_correct) {
  RVL_CHECK(pre_correct.size() == post_correct.size(), ValidationError,
            "McNemar needs paired readings");
  McNemarResult res;
  for (std::size_t i = 0; i < pre_correct.size(); ++i) {
    if (pre_correct[i] && !post_correct[i]) ++res.b;
    if (!pre_correct[i] && post_correct[i]) ++res.c;
  }
  const long n = res.b + res.c;
  if (n == 0 || res.b == res.c) {
    res.p_value = 1.0;
    return res;
  }
  res.p_value = std::min(1.0, 2.0 * binomial_half_cdf(std::min(res.b, res.c), n));
  return res;
}

}  // namespace retinavl::metrics
