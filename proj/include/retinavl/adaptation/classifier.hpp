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

// Linear probing and full fine-tuning of a classification head on the
// vision encoder, with label-fraction subsampling and checkpoint selection.

#pragma once

#include "retinavl/core/error.hpp"
#include "retinavl/core/image.hpp"
#include "retinavl/core/params.hpp"
#include "retinavl/data/records.hpp"
#include "retinavl/encoders/encoders.hpp"
#include "retinavl/metrics/metrics.hpp"

#include <cstdint>
#include <vector>

namespace retinavl::adaptation {

/// Which encoder output feeds the head. Ocular tasks use the unit-norm projected
/// embedding, oculomics tasks the pooled feature before the projection.
enum class FeatureSource { embedding, pooled };
enum class MixupMode { off, fine_tune_only, always };

struct ProbeConfig {
  int epochs = 20;
  int batch_size = 16;
  double head_lr = 5e-4;
  double encoder_lr = 0.0;  ///< 0 selects probing
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-2;
  FeatureSource features = FeatureSource::embedding;
  MixupMode mixup = MixupMode::fine_tune_only;
  double mixup_alpha = 0.2;
  std::uint64_t seed = 0;

  bool probing() const { return encoder_lr == 0.0; }
  bool uses_mixup() const;
  void validate() const;

  static ProbeConfig linear_probe();
  static ProbeConfig fine_tune_ocular();     ///< encoder lr 5e-7
  static ProbeConfig fine_tune_oculomics();  ///< encoder lr 5e-6, pooled features
};

/// Indicator labels for N samples over C classes.
struct TaskLabels {
  metrics::LabelMatrix labels;
  data::LabelMode mode = data::LabelMode::single_label;

  Eigen::Index size() const { return labels.rows(); }
  Eigen::Index classes() const { return labels.cols(); }
  void validate() const;
};

struct ImageDataset {
  std::vector<Image> images;
  TaskLabels targets;
};

struct EpochLog {
  int epoch = 0;  ///< 1-based
  double train_loss = 0;
  double val_auroc = 0;
  double val_aupr = 0;
  double score = 0;
};

/// Raised when the training loss stops being finite; carries the log so far.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::vector<EpochLog> log) : NumericError(what), log_(std::move(log)) {}
  const std::vector<EpochLog>& log() const { return log_; }

 private:
  std::vector<EpochLog> log_;
};

/// auroc + 0.5 * aupr, both in [0, 1].
double checkpoint_score(double auroc, double aupr);

/// Index of the best (auroc, aupr) pair; ties keep the earliest.
std::size_t select_checkpoint(const std::vector<std::pair<double, double>>& trace);

/// Stratified subset of single-label class indices: each class keeps
/// max(1, round(fraction * n_c)) samples chosen by a seeded shuffle. Returns
/// row indices in their original order.
std::vector<Eigen::Index> subsample_labels(const metrics::Labels& class_index, int num_classes, double fraction,
                                           std::uint64_t seed);

/// Head parameters "w" (F x C) and "b" (1 x C).
ParameterSet init_head(Eigen::Index features, Eigen::Index classes);

/// Softmax (single-label) or sigmoid (multi-label) probabilities.
Matrix predict_proba(const Matrix& features, const ParameterSet& head, data::LabelMode mode);

/// Mean cross-entropy of the head on (soft) targets and its gradient wrt the logits.
struct HeadLoss {
  double value = 0;
  Matrix d_logits;
};
HeadLoss head_loss(const Matrix& logits, const Matrix& targets, data::LabelMode mode);

/// One feature row per image from the frozen encoder.
Matrix extract_features(const encoders::Model& model, const std::vector<Image>& images, FeatureSource source);

/// Macro AUROC and AUPR over the columns where both are defined.
std::pair<double, double> validation_metrics(const Matrix& probabilities, const TaskLabels& targets);

struct ClassifierResult {
  ParameterSet head;     ///< best epoch
  ParameterSet encoder;  ///< "visual.*" entries of the best epoch (unchanged when probing)
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

/// Head-only training on fixed features (the probing path, also usable without an encoder).
ClassifierResult train_probe(const Matrix& train_features, const TaskLabels& train, const Matrix& val_features,
                             const TaskLabels& val, const ProbeConfig& config);

/// Probing when encoder_lr is 0, otherwise fine-tuning of the vision tower with its own
/// learning rate. Selection uses checkpoint_score on `val` after every epoch.
ClassifierResult train_classifier(const encoders::Model& model, const ImageDataset& train, const ImageDataset& val,
                                  const ProbeConfig& config);

/// Copy of `model` with its vision tower replaced by `encoder`.
encoders::Model with_encoder(const encoders::Model& model, const ParameterSet& encoder);
/// The "visual.*" entries of the model, names kept.
ParameterSet vision_params(const encoders::Model& model);

}  // namespace retinavl::adaptation
