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

#include "retinavl/metrics/metrics.hpp"

#include "retinavl/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace retinavl::metrics {

ScoreSet ScoreSet::binary(const Vector& scores, const Labels& labels) {
  ScoreSet s;
  s.scores = scores;
  s.labels = labels;
  s.validate();
  return s;
}

ScoreSet ScoreSet::single_label(const Matrix& scores, const Labels& class_index) {
  RVL_CHECK(scores.rows() == class_index.size(), ShapeError, "score/label row mismatch");
  ScoreSet s;
  s.scores = scores;
  s.labels = LabelMatrix::Zero(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < class_index.size(); ++i) {
    RVL_CHECK(class_index(i) >= 0 && class_index(i) < scores.cols(), SchemaError,
              "class index out of range");
    s.labels(i, class_index(i)) = 1;
  }
  return s;
}

ScoreSet ScoreSet::select(const std::vector<Eigen::Index>& rows) const {
  ScoreSet out;
  out.scores.resize(static_cast<Eigen::Index>(rows.size()), scores.cols());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()), labels.cols());
  if (!ids.empty()) out.ids.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = rows[k];
    out.scores.row(static_cast<Eigen::Index>(k)) = scores.row(r);
    out.labels.row(static_cast<Eigen::Index>(k)) = labels.row(r);
    if (!ids.empty()) out.ids.push_back(ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

void ScoreSet::validate() const {
  RVL_CHECK(scores.rows() == labels.rows() && scores.cols() == labels.cols(), ShapeError,
            "scores and labels differ in shape");
  RVL_CHECK(ids.empty() || static_cast<Eigen::Index>(ids.size()) == scores.rows(), ShapeError,
            "ids length differs from scores");
  RVL_CHECK(((labels.array() == 0) || (labels.array() == 1)).all(), SchemaError,
            "labels must be binary indicators");
}

namespace {

void check_binary(const Vector& scores, const Labels& labels) {
  RVL_CHECK(scores.size() == labels.size(), ShapeError, "scores and labels differ in length");
  RVL_CHECK(((labels.array() == 0) || (labels.array() == 1)).all(), SchemaError,
            "labels must be 0/1");
}

// Indices sorted by descending score.
std::vector<Eigen::Index> order_desc(const Vector& scores) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return scores(a) > scores(b); });
  return idx;
}

// Tie groups of a descending order: (positives, negatives) per distinct score.
struct Group {
  double score;
  long pos;
  long neg;
};

std::vector<Group> groups_desc(const Vector& scores, const Labels& labels) {
  const auto idx = order_desc(scores);
  std::vector<Group> out;
  for (auto i : idx) {
    if (out.empty() || scores(i) != out.back().score) out.push_back({scores(i), 0, 0});
    (labels(i) == 1 ? out.back().pos : out.back().neg) += 1;
  }
  return out;
}

}  // namespace

double auroc(const Vector& scores, const Labels& labels) {
  check_binary(scores, labels);
  const long n_pos = labels.sum();
  const long n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUROC needs both classes");
  // Walk descending; every negative below a positive group counts as a win.
  const auto groups = groups_desc(scores, labels);
  long neg_seen = 0;
  long wins = 0;
  long ties = 0;
  for (const auto& g : groups) {
    wins += g.pos * (n_neg - neg_seen - g.neg);
    ties += g.pos * g.neg;
    neg_seen += g.neg;
  }
  return (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double aupr(const Vector& scores, const Labels& labels) {
  check_binary(scores, labels);
  const long n_pos = labels.sum();
  if (n_pos == 0) throw UndefinedMetricError("AUPR needs at least one positive");
  long tp = 0;
  long fp = 0;
  double prev_recall = 0.0;
  double area = 0.0;
  for (const auto& g : groups_desc(scores, labels)) {
    tp += g.pos;
    fp += g.neg;
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

MacroAverage macro_average(const std::vector<std::optional<double>>& per_class) {
  MacroAverage out;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c]) {
      sum += *per_class[c];
      ++n;
    } else {
      out.undefined.push_back(c);
    }
  }
  if (n == 0) throw UndefinedMetricError("macro average: no class has a defined value");
  out.value = sum / static_cast<double>(n);
  return out;
}

std::vector<std::optional<double>> per_class(const ScoreSet& set,
                                             double (*metric)(const Vector&, const Labels&)) {
  set.validate();
  std::vector<std::optional<double>> out;
  out.reserve(static_cast<std::size_t>(set.columns()));
  for (Eigen::Index c = 0; c < set.columns(); ++c) {
    try {
      out.emplace_back(metric(set.scores.col(c), set.labels.col(c)));
    } catch (const UndefinedMetricError&) {
      out.emplace_back(std::nullopt);
    }
  }
  return out;
}

double macro_auroc(const ScoreSet& set) { return macro_average(per_class(set, &auroc)).value; }
double macro_aupr(const ScoreSet& set) { return macro_average(per_class(set, &aupr)).value; }

ConfusionMetrics confusion_metrics(const Vector& scores, const Labels& labels, double threshold) {
  check_binary(scores, labels);
  RVL_CHECK(scores.size() > 0, ValidationError, "confusion metrics on empty input");
  RVL_CHECK(std::isfinite(threshold), ValidationError, "threshold must be finite");
  ConfusionMetrics m;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const bool pred = scores(i) >= threshold;
    const bool truth = labels(i) == 1;
    if (pred && truth) ++m.tp;
    else if (pred) ++m.fp;
    else if (truth) ++m.fn;
    else ++m.tn;
  }
  auto ratio = [](long a, long b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  m.accuracy = ratio(m.tp + m.tn, m.tp + m.tn + m.fp + m.fn);
  m.sensitivity = ratio(m.tp, m.tp + m.fn);
  m.specificity = ratio(m.tn, m.tn + m.fp);
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.f1 = ratio(2 * m.tp, 2 * m.tp + m.fp + m.fn);
  return m;
}

double sensitivity_at_specificity(const Vector& scores, const Labels& labels, double target) {
  check_binary(scores, labels);
  const long n_pos = labels.sum();
  const long n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw UndefinedMetricError("sensitivity at specificity needs both classes");
  // Threshold above every score: nothing predicted positive.
  double best = 0.0;
  long tp = 0;
  long fp = 0;
  for (const auto& g : groups_desc(scores, labels)) {
    tp += g.pos;
    fp += g.neg;
    const double spec = static_cast<double>(n_neg - fp) / static_cast<double>(n_neg);
    if (spec < target) break;
    best = std::max(best, static_cast<double>(tp) / static_cast<double>(n_pos));
  }
  return best;
}

double optimize_threshold(const Vector& scores, const Labels& labels) {
  check_binary(scores, labels);
  RVL_CHECK(scores.size() > 0, UndefinedMetricError, "threshold search on empty input");
  std::vector<double> distinct(scores.data(), scores.data() + scores.size());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> candidates;
  candidates.reserve(distinct.size() + 1);
  candidates.push_back(std::nextafter(distinct.front(), -std::numeric_limits<double>::infinity()));
  for (std::size_t k = 0; k + 1 < distinct.size(); ++k)
    candidates.push_back(0.5 * (distinct[k] + distinct[k + 1]));
  candidates.push_back(std::nextafter(distinct.back(), std::numeric_limits<double>::infinity()));

  double best_t = candidates.front();
  double best_f1 = -1.0;
  for (double t : candidates) {
    const double f1 = confusion_metrics(scores, labels, t).f1;
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return best_t;
}

Vector optimize_thresholds(const ScoreSet& validation) {
  validation.validate();
  Vector out(validation.columns());
  for (Eigen::Index c = 0; c < validation.columns(); ++c) {
    const Labels col = validation.labels.col(c);
    if (col.sum() == 0 || col.sum() == col.size())
      throw UndefinedMetricError("threshold optimization: class " + std::to_string(c) +
                                 " has a single label value on validation");
    out(c) = optimize_threshold(validation.scores.col(c), col);
  }
  return out;
}

DiceIou dice_iou(const Mask& pred, const Mask& gt) {
  RVL_CHECK(pred.rows() == gt.rows() && pred.cols() == gt.cols(), ShapeError,
            "mask shapes differ");
  const long inter = (pred && gt).count();
  const long a = pred.count();
  const long b = gt.count();
  const long uni = a + b - inter;
  if (uni == 0) throw UndefinedMetricError("DSC/IoU undefined: both masks empty");
  return {2.0 * static_cast<double>(inter) / static_cast<double>(a + b),
          static_cast<double>(inter) / static_cast<double>(uni)};
}

double PearsonR2::pearson() const {
  if (!r) throw UndefinedMetricError("Pearson r undefined for constant predictions");
  return *r;
}

PearsonR2 pearson_r2(const Vector& predictions, const Vector& targets) {
  RVL_CHECK(predictions.size() == targets.size(), ShapeError, "length mismatch");
  RVL_CHECK(predictions.size() >= 2, UndefinedMetricError, "need at least two points");
  const Vector dt = targets.array() - targets.mean();
  const double ss_tot = dt.squaredNorm();
  if (ss_tot == 0.0) throw UndefinedMetricError("R^2 undefined for constant targets");
  PearsonR2 out;
  out.r2 = 1.0 - (predictions - targets).squaredNorm() / ss_tot;
  const Vector dp = predictions.array() - predictions.mean();
  const double sp = dp.squaredNorm();
  if (sp > 0.0) out.r = dp.dot(dt) / std::sqrt(sp * ss_tot);
  return out;
}

}  // namespace retinavl::metrics
