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

#include "doctest.h"
#include "stats_oracles.hpp"

#include "retinavl/core/error.hpp"
#include "retinavl/metrics/stats.hpp"

#include <algorithm>
#include <cmath>
#include <random>

using namespace retinavl;
using namespace retinavl::metrics;

TEST_CASE("mcnemar exact binomial") {
  std::vector<bool> pre(10, false), post(10, true);
  const auto r = mcnemar(pre, post);
  CHECK(r.b == 0);
  CHECK(r.c == 10);
  CHECK(r.p_value == std::ldexp(1.0, -9));

  std::vector<bool> a{true, false, true, false}, b{false, true, true, false};
  CHECK(mcnemar(a, b).p_value == 1.0);
  CHECK(mcnemar({true, false}, {true, false}).p_value == 1.0);
  CHECK_THROWS_AS(mcnemar({true}, {true, false}), ValidationError);
}

TEST_CASE("binomial cdf matches direct sum") {
  for (long n : {1L, 5L, 17L, 40L})
    for (long k = 0; k <= n; ++k)
      CHECK(binomial_half_cdf(k, n) == doctest::Approx(oracle::binomial_half_cdf(k, n)).epsilon(1e-12));
}

TEST_CASE("t-test against closed form and quadrature") {
  Vector a(5), b(5);
  a << 1, 2, 3, 4, 5;
  b << 6, 7, 8, 9, 10;
  const auto r = t_test_two_sided(a, b);
  // Pooled variance 2.5, standard error sqrt(2.5 * 0.4) = 1, so t = -5 on 8 dof.
  CHECK(r.t == doctest::Approx(-5.0).epsilon(1e-14));
  CHECK(r.dof == 8.0);
  CHECK(std::abs(r.p_value - oracle::t_two_sided_quadrature(5.0, 8.0)) <= 1e-8);
  CHECK(t_test_two_sided(b, a).p_value == r.p_value);

  CHECK(t_test_two_sided(a, a).t == 0.0);
  CHECK(t_test_two_sided(a, a).p_value == doctest::Approx(1.0));

  Vector c = Vector::Constant(5, 2.0);
  CHECK(t_test_two_sided(c, c).p_value == 1.0);
  CHECK(t_test_two_sided(c, Vector::Constant(5, 3.0)).p_value == 0.0);
  CHECK_THROWS_AS(t_test_two_sided(Vector::Constant(1, 1.0), a), ValidationError);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Vector x(5), y(5);
    for (int i = 0; i < 5; ++i) {
      x(i) = g(rng);
      y(i) = g(rng) + 0.7;
    }
    const auto t = t_test_two_sided(x, y);
    CHECK(std::abs(t.p_value - oracle::t_two_sided_quadrature(std::abs(t.t), t.dof)) <= 1e-8);
  }
}

namespace {

double mean_metric(const ScoreSet& s) { return s.scores.col(0).mean(); }

ScoreSet normal_sample(std::mt19937_64& rng, int n, double mu) {
  std::normal_distribution<double> g(mu, 1.0);
  ScoreSet s;
  s.scores.resize(n, 1);
  s.labels = LabelMatrix::Zero(n, 1);
  for (int i = 0; i < n; ++i) s.scores(i, 0) = g(rng);
  return s;
}

}  // namespace

TEST_CASE("bootstrap ci basics") {
  ScoreSet flat;
  flat.scores = Matrix::Constant(20, 1, 0.25);
  flat.labels = LabelMatrix::Zero(20, 1);
  const auto rep = bootstrap_ci(mean_metric, flat, {200, 0.95, 7});
  CHECK(rep.point == 0.25);
  CHECK(rep.ci_low == 0.25);
  CHECK(rep.ci_high == 0.25);

  std::mt19937_64 rng(9);
  const auto s = normal_sample(rng, 40, 0.0);
  const auto r1 = bootstrap_ci(mean_metric, s, {500, 0.95, 42});
  const auto r2 = bootstrap_ci(mean_metric, s, {500, 0.95, 42});
  CHECK(r1.ci_low == r2.ci_low);
  CHECK(r1.ci_high == r2.ci_high);
  CHECK(r1.ci_low <= r1.point);
  CHECK(r1.point <= r1.ci_high);
}

TEST_CASE("bootstrap by id is invariant to row order") {
  std::mt19937_64 rng(4);
  auto s = normal_sample(rng, 30, 1.0);
  for (int i = 0; i < 30; ++i) s.ids.push_back("eye" + std::to_string(i / 2));
  std::vector<Eigen::Index> perm(30);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto shuffled = s.select(perm);
  BootstrapOptions opts{300, 0.95, 5, true};
  const auto a = bootstrap_ci(mean_metric, s, opts);
  const auto b = bootstrap_ci(mean_metric, shuffled, opts);
  CHECK(a.ci_low == doctest::Approx(b.ci_low).epsilon(1e-12));
  CHECK(a.ci_high == doctest::Approx(b.ci_high).epsilon(1e-12));
}

TEST_CASE("bootstrap fails when the metric is mostly undefined") {
  ScoreSet s;
  s.scores.resize(4, 1);
  s.scores << 0.1, 0.2, 0.3, 0.4;
  s.labels.resize(4, 1);
  s.labels << 1, 0, 0, 0;
  auto fragile = [](const ScoreSet& x) {
    if (x.labels.col(0).sum() != 1) throw UndefinedMetricError("needs exactly one positive");
    return 0.0;
  };
  CHECK_THROWS_AS(bootstrap_ci(fragile, s, {400, 0.95, 1}), UndefinedMetricError);
}

TEST_CASE("bootstrap ci coverage") {
  std::mt19937_64 rng(20260);
  int covered = 0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    const auto s = normal_sample(rng, 60, 3.0);
    const auto rep = bootstrap_ci(mean_metric, s, {1000, 0.95, static_cast<std::uint64_t>(t)});
    covered += rep.ci_low <= 3.0 && 3.0 <= rep.ci_high;
  }
  const double rate = static_cast<double>(covered) / trials;
  CHECK(rate >= 0.91);
  CHECK(rate <= 0.98);
}

TEST_CASE("bootstrap p-value") {
  ScoreSet a, b;
  a.scores.resize(12, 1);
  b.scores.resize(12, 1);
  a.labels = LabelMatrix::Zero(12, 1);
  b.labels = LabelMatrix::Zero(12, 1);
  for (int i = 0; i < 12; ++i) {
    a.scores(i, 0) = 1.0 + 0.1 * i;
    b.scores(i, 0) = 0.1 * i;
  }
  CHECK(bootstrap_pvalue(mean_metric, a, b, {500, 0.95, 3}).p_value == 0.0);
  CHECK(bootstrap_pvalue(mean_metric, a, a, {500, 0.95, 3}).p_value == 1.0);

  b.ids = std::vector<std::string>(12, "x");
  CHECK_THROWS_AS(bootstrap_pvalue(mean_metric, a, b, {}), ValidationError);
}

TEST_CASE("bootstrap p-value agrees with an independent resampler") {
  std::mt19937_64 rng(77);
  const auto a = normal_sample(rng, 50, 0.10);
  auto b = a;
  std::normal_distribution<double> jitter(0.0, 0.3);
  for (int i = 0; i < 50; ++i) b.scores(i, 0) = a.scores(i, 0) + jitter(rng) - 0.02;
  const auto res = bootstrap_pvalue(mean_metric, a, b, {2000, 0.95, 99});
  const double ref = oracle::paired_bootstrap_p(a.scores.col(0), b.scores.col(0), 20000, 123);
  // Different streams: agreement up to Monte-Carlo noise (sd of p is < 0.025 here).
  CHECK(std::abs(res.p_value - ref) < 0.08);
}
