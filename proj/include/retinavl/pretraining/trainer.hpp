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

// Contrastive pretraining loop.
//
// Every step encodes a batch with both towers on one tape, evaluates the
// objective and its analytic gradient with respect to the embeddings, seeds
// the tape with those gradients, and applies AdamW and the EMA update.

#pragma once

#include "retinavl/data/laterality.hpp"
#include "retinavl/data/preprocess.hpp"
#include "retinavl/data/records.hpp"
#include "retinavl/encoders/encoders.hpp"
#include "retinavl/pretraining/losses.hpp"
#include "retinavl/pretraining/optim.hpp"

#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace retinavl::pretraining {

/// One preprocessed image with its tokenized eye-level report.
struct PretrainSample {
  std::string id;
  Image image;
  encoders::TokenIds tokens;
  std::optional<double> age;
  std::optional<double> sex;  ///< 0 female, 1 male
};

struct SampleLoadOptions {
  data::Modality modality = data::Modality::CFP;
  data::KeywordTable keywords = data::KeywordTable::defaults();
  data::PreprocessOptions preprocess;
};

struct SampleLoadReport {
  std::vector<PretrainSample> samples;
  std::vector<std::string> skipped;  ///< ids of unusable records with the reason
};

/// Reads, preprocesses and tokenizes every record. Bilateral reports are segmented and the
/// record's own eye is kept; records without usable text or image are skipped, not fatal.
SampleLoadReport load_pretrain_samples(const data::DatasetManifest& manifest, const encoders::Model& model,
                                       const SampleLoadOptions& options = {});

/// Parameter names of the temperature and the demographic heads inside the model's set.
inline constexpr const char* kLogTemperature = "log_temperature";
inline constexpr const char* kHeadSex = "heads.w_sex";
inline constexpr const char* kHeadAge = "heads.w_age";

struct TrainState {
  encoders::Model model;
  ParameterSet ema;
  AdamW optimizer;
  TrainConfig config;
  LossWeights weights;
  data::AugmentationPolicy augmentation;
  int step = 0;
};

/// Adds the temperature (at config.temperature_init) and, for the demographic variant, the
/// heads to the model parameters, then snapshots them as the initial EMA.
TrainState init_train_state(encoders::Model model, const TrainConfig& config, const LossWeights& weights,
                            const data::AugmentationPolicy& augmentation = {});

struct StepLog {
  int step = 0;
  double lr = 0;
  double temperature = 0;
  LossRecord loss;
};

struct BatchGradients {
  LossRecord record;
  double total = 0;
  ParameterSet grads;  ///< same layout as the model parameters
  double temperature = 0;
};

/// Loss and gradient of every model parameter on one batch, without augmentation or update.
BatchGradients batch_gradients(const encoders::Model& model, const LossWeights& weights,
                               const std::vector<const PretrainSample*>& batch);

/// One optimizer step on `batch`. Throws NumericError (message carries the loss record) when
/// the loss is not finite; the state is left untouched in that case.
StepLog train_step(TrainState& state, const std::vector<const PretrainSample*>& batch);

struct LoopOptions {
  std::filesystem::path output_dir;  ///< empty: no files written
  int checkpoint_every = 0;          ///< 0: only the final checkpoints
};

struct LoopResult {
  std::vector<StepLog> log;
  std::vector<std::filesystem::path> checkpoints;
};

/// Runs config.total_steps steps over shuffled batches of distinct samples. Writes loss_log.jsonl
/// and raw plus EMA checkpoints named step_<n>_raw.ckpt / step_<n>_ema.ckpt.
LoopResult train_loop(TrainState& state, const std::vector<PretrainSample>& samples, const LoopOptions& options = {});

/// Fraction of images whose most similar text (among the same samples) is their own report.
double retrieval_top1(const encoders::Model& model, const std::vector<PretrainSample>& samples);

/// Symmetric contrastive loss of the model on the given samples, without augmentation.
double evaluate_clip_loss(const encoders::Model& model, const std::vector<PretrainSample>& samples);

/// The model with its parameters replaced by the EMA copy.
encoders::Model ema_model(const TrainState& state);

}  // namespace retinavl::pretraining
