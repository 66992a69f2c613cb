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

// Prompt-ensemble zero-shot classification and benchmark trimming.

#pragma once

#include "retinavl/data/records.hpp"
#include "retinavl/encoders/encoders.hpp"
#include "retinavl/metrics/metrics.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace retinavl::zeroshot {

/// Per-class prompt lists, in class order.
struct PromptEnsemble {
  std::vector<std::string> classes;
  std::vector<std::vector<std::string>> prompts;

  /// Each template's "{class}" is replaced by the class name.
  static PromptEnsemble from_templates(const std::vector<std::string>& classes,
                                       const std::vector<std::string>& templates = {"{class}", "suspected {class}"});
  /// JSON object {"class": ["prompt", ...], ...} (file order kept) or an array of
  /// {"class": ..., "prompts": [...]} entries.
  static PromptEnsemble load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  /// Reorders to `classes`, which must all be present.
  PromptEnsemble select(const std::vector<std::string>& classes) const;
  void validate() const;
};

using TextEncoder = std::function<Vector(const std::string&)>;

struct ClassEmbeddingOptions {
  /// Re-normalize each averaged class embedding to unit length.
  bool renormalize = true;
};

/// C x D matrix: per class, the mean of its prompt embeddings (re-normalized by default).
Matrix build_class_embeddings(const PromptEnsemble& ensemble, const TextEncoder& encoder,
                              const ClassEmbeddingOptions& options = {});
Matrix build_class_embeddings(const PromptEnsemble& ensemble, const encoders::Model& model,
                              const ClassEmbeddingOptions& options = {});

struct PredictionMatrix {
  Matrix scores;  ///< N x C cosine similarities
  std::vector<std::string> classes;
  data::LabelMode mode = data::LabelMode::multi_label;
  std::vector<std::string> ids;

  /// Highest-scoring class per row (first on ties).
  std::vector<int> argmax() const;
  void validate() const;
};

/// scores(i, c) = cosine(image i, class c). No softmax, so multi-label columns stay independent.
PredictionMatrix zero_shot_classify(const Matrix& image_embeddings, const Matrix& class_embeddings,
                                    const std::vector<std::string>& classes = {},
                                    data::LabelMode mode = data::LabelMode::multi_label);

/// Labels after trimming, plus how they map back to the source data.
struct TrimmedLabels {
  std::vector<std::string> classes;
  metrics::LabelMatrix labels;                 ///< rows x trimmed classes
  std::vector<Eigen::Index> rows;              ///< source row of every kept sample
  std::vector<std::vector<int>> column_sources;  ///< source columns folded into each trimmed column
};

/// Applies the schema's rules in order. Merge relabels every source as the target (an existing
/// class or a new one placed at the first source's position) and keeps sample count. Drop removes
/// the classes; in single-label schemas it also removes the samples that carried them.
TrimmedLabels apply_benchmark_trim(const metrics::LabelMatrix& labels, const data::LabelSchema& schema);

/// Restricts predictions made over the untrimmed classes to the trimmed view: kept rows, and per
/// trimmed column the maximum over its source columns.
PredictionMatrix trim_predictions(const PredictionMatrix& predictions, const TrimmedLabels& view);

/// Elementwise mean of the per-view score vectors of one eye.
Vector eye_level_average(const std::vector<Vector>& view_scores);

/// Averages rows sharing a group key (for example "<patient>/<eye>"); output rows follow the
/// first appearance of each key.
PredictionMatrix average_by_group(const PredictionMatrix& predictions, const std::vector<std::string>& keys);

/// One line per row: {"id": ..., "scores": {"class": score, ...}}.
void write_predictions_jsonl(const std::filesystem::path& path, const PredictionMatrix& predictions);

}  // namespace retinavl::zeroshot
