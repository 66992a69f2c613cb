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

#pragma once

#include "retinavl/metrics/metrics.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace retinavl::metrics {

using Metric = std::function<double(const ScoreSet&)>;

struct StatReport {
  std::string metric;
  double point = 0;
  double ci_low = 0;
  double ci_high = 0;
  int n_resamples = 0;
  std::uint64_t seed = 0;
  long n = 0;
  std::optional<double> p_value;
  std::string comparator;
};

struct BootstrapOptions {
  int n_resamples = 2000;
  double level = 0.95;
  std::uint64_t seed = 0;
  /// Resample ScoreSet::ids groups instead of rows (eye-level data).
  bool by_id = false;
};

/// Percentile bootstrap CI. Resamples where the metric is undefined are
/// skipped; more than half undefined is an error. The interval is widened to
/// include the point estimate if needed.
StatReport bootstrap_ci(const Metric& metric, const ScoreSet& set, const BootstrapOptions& opts = {});

struct BootstrapComparison {
  double p_value = 1.0;
  double point_a = 0;
  double point_b = 0;
  bool a_is_better = true;
  int not_better = 0;  ///< resamples where the better model failed to win strictly
};

/// Paired bootstrap p-value: twice the fraction of resamples in which the model
/// with the higher point estimate does not score strictly higher, capped at 1.
/// Both sets must list the same ids (or the same number of rows when unkeyed).
BootstrapComparison bootstrap_pvalue(const Metric& metric, const ScoreSet& a, const ScoreSet& b,
                                     const BootstrapOptions& opts = {});

struct TTestResult {
  double t = 0;
  double dof = 0;
  double p_value = 1;
};

/// Two-sample pooled-variance Student t-test, two-sided.
TTestResult t_test_two_sided(const Vector& a, const Vector& b);

struct McNemarResult {
  long b = 0;  ///< correct before, wrong after
  long c = 0;  ///< wrong before, correct after
  double p_value = 1;
};

/// Exact binomial McNemar test on discordant pairs.
McNemarResult mcnemar(const std::vector<bool>& pre_correct, const std::vector<bool>& post_correct);

/// P(X <= k) for X ~ Binomial(n, 1/2), exact for n up to ~1000.
double binomial_half_cdf(long k, long n);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Two-sided tail probability of Student's t with `dof` degrees of freedom.
double student_t_two_sided(double t, double dof);

/// Linear-interpolated quantile of already sorted values, q in [0, 1].
double sorted_quantile(const std::vector<double>& sorted, double q);

}  // namespace retinavl::metrics
