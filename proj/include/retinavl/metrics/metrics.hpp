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

// Classification, segmentation and regression metrics.
//
// Binary metrics take a score vector and a 0/1 label vector. Ties follow two
// conventions: AUROC gives half credit to tied positive/negative pairs, and
// AUPR integrates the precision-recall step function over distinct score
// levels, so all samples sharing a score flip together.

#pragma once

#include "retinavl/core/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace retinavl::metrics {

using Labels = Eigen::VectorXi;
using LabelMatrix = Eigen::MatrixXi;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Scores and labels for N samples over C columns (C = 1 for a binary task).
/// Labels are one-vs-rest indicators. `ids` are optional resampling keys.
struct ScoreSet {
  Matrix scores;
  LabelMatrix labels;
  std::vector<std::string> ids;

  Eigen::Index size() const { return scores.rows(); }
  Eigen::Index columns() const { return scores.cols(); }

  static ScoreSet binary(const Vector& scores, const Labels& labels);
  /// One-hot encodes single-label class indices into C indicator columns.
  static ScoreSet single_label(const Matrix& scores, const Labels& class_index);

  ScoreSet select(const std::vector<Eigen::Index>& rows) const;
  void validate() const;
};

double auroc(const Vector& scores, const Labels& labels);
double aupr(const Vector& scores, const Labels& labels);

struct MacroAverage {
  double value = 0.0;
  std::vector<std::size_t> undefined;  ///< class indices with no defined value
};

/// Unweighted mean over the defined entries; undefined entries are reported.
MacroAverage macro_average(const std::vector<std::optional<double>>& per_class);

/// Per-column metric over a ScoreSet, with undefined columns left empty.
std::vector<std::optional<double>> per_class(const ScoreSet& set,
                                             double (*metric)(const Vector&, const Labels&));
double macro_auroc(const ScoreSet& set);
double macro_aupr(const ScoreSet& set);

struct ConfusionMetrics {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0, sensitivity = 0, specificity = 0, precision = 0, f1 = 0;
};

/// Positive iff score >= threshold. Ratios with an empty denominator are 0.
ConfusionMetrics confusion_metrics(const Vector& scores, const Labels& labels, double threshold);

double sensitivity_at_specificity(const Vector& scores, const Labels& labels, double target = 0.95);

/// F1-maximizing threshold. Candidates are gap midpoints between consecutive
/// distinct scores plus one value just below the minimum and one just above
/// the maximum; the smallest maximizing candidate wins.
double optimize_threshold(const Vector& scores, const Labels& labels);
Vector optimize_thresholds(const ScoreSet& validation);

struct DiceIou {
  double dice = 0;
  double iou = 0;
};
DiceIou dice_iou(const Mask& pred, const Mask& gt);

struct PearsonR2 {
  std::optional<double> r;  ///< empty when predictions are constant
  double r2 = 0;

  double pearson() const;  ///< throws UndefinedMetricError when r is empty
};
PearsonR2 pearson_r2(const Vector& predictions, const Vector& targets);

}  // namespace retinavl::metrics
