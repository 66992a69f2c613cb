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

#include "retinavl/pretraining/trainer.hpp"

#include "retinavl/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace retinavl::pretraining {

using encoders::Bindings;
using nlohmann::json;

SampleLoadReport load_pretrain_samples(const data::DatasetManifest& manifest, const encoders::Model& model,
                                       const SampleLoadOptions& options) {
  SampleLoadReport out;
  const int side = model.config.vision.image_side;
  for (const auto& r : manifest.records) {
    try {
      std::string findings = r.report.findings, impression = r.report.impression;
      if (r.report.laterality == data::Laterality::BOTH) {
        const auto seg = data::segment_report_by_eye(r.report.findings, r.report.impression, options.keywords);
        const data::EyeParts& eye = r.eye == data::Eye::OD ? seg.od : seg.os;
        findings = eye.findings_text();
        impression = eye.impression_text();
      }
      RVL_CHECK(!findings.empty(), UnusableRecordError, "no findings for this eye");
      data::ClinicalReport rep{r.report.history, findings, impression, data::Laterality::BOTH};
      PretrainSample s;
      s.id = r.image_id;
      s.image = data::preprocess_image(read_image(manifest.resolve(r)), options.modality, side, options.preprocess);
      RVL_CHECK(s.image.channels() == model.config.vision.channels, UnusableRecordError, "channel count mismatch");
      s.tokens = model.tokenizer.tokenize(rep.text(), model.config.text.max_tokens);
      s.age = r.age;
      if (r.sex) s.sex = static_cast<double>(static_cast<int>(*r.sex));
      out.samples.push_back(std::move(s));
    } catch (const UnusableRecordError& e) {
      out.skipped.push_back(r.image_id + ": " + e.what());
    } catch (const IoError& e) {
      out.skipped.push_back(r.image_id + ": " + e.what());
    }
  }
  return out;
}

TrainState init_train_state(encoders::Model model, const TrainConfig& config, const LossWeights& weights,
                            const data::AugmentationPolicy& augmentation) {
  config.validate();
  weights.validate();
  augmentation.validate();
  ParameterSet& p = model.params;
  const Matrix log_tau = Matrix::Constant(1, 1, std::log(config.temperature_init));
  if (p.contains(kLogTemperature)) p[kLogTemperature] = log_tau;
  else p.add(kLogTemperature, log_tau);
  if (weights.variant == Variant::demographic) {
    const int f = model.config.vision.width;
    if (!p.contains(kHeadSex)) p.add(kHeadSex, Matrix::Zero(f, 1));
    if (!p.contains(kHeadAge)) p.add(kHeadAge, Matrix::Zero(f, 1));
  }
  TrainState s{std::move(model), {}, AdamW({config.betas.first, config.betas.second, config.epsilon, config.weight_decay, false}),
               config, weights, augmentation, 0};
  s.ema = s.model.params;
  return s;
}

namespace {

std::string describe(const LossRecord& r) {
  std::ostringstream os;
  os << "clip=" << r.clip << " align=" << r.align << " sex=" << r.sex << " age=" << r.age << " total=" << r.total;
  return os.str();
}

}  // namespace

BatchGradients batch_gradients(const encoders::Model& model, const LossWeights& weights,
                               const std::vector<const PretrainSample*>& batch) {
  RVL_CHECK(!batch.empty(), ValidationError, "empty batch");
  const auto& cfg = model.config;
  const bool demographic = weights.variant == Variant::demographic;
  ad::Tape tape;
  const Bindings p = tape.bind(model.params);
  std::vector<ad::Var> u_rows, v_rows, f_rows;
  const auto n = static_cast<Eigen::Index>(batch.size());
  Demographics<double> demo{Vector::Zero(n), Vector::Zero(n), Vector::Zero(n), Vector::Zero(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const PretrainSample& s = *batch[static_cast<std::size_t>(i)];
    const auto vo = encoders::vision_forward(p, s.image, cfg.vision);
    u_rows.push_back(vo.embedding);
    f_rows.push_back(vo.features);
    v_rows.push_back(encoders::text_forward(p, s.tokens, cfg.text));
    if (s.sex) {
      demo.sex(i) = *s.sex;
      demo.sex_mask(i) = 1;
    }
    if (s.age) {
      demo.age(i) = *s.age;
      demo.age_mask(i) = 1;
    }
  }
  const ad::Var u = ad::concat_rows(u_rows);
  const ad::Var v = ad::concat_rows(v_rows);
  const ad::Var f = ad::concat_rows(f_rows);

  ObjectiveInputs<double> in;
  in.image_embeddings = u.value();
  in.text_embeddings = v.value();
  in.image_features = f.value();
  in.log_temperature = model.params[kLogTemperature](0, 0);
  if (demographic) {
    in.heads = {model.params[kHeadSex].col(0), model.params[kHeadAge].col(0)};
    in.demographics = demo;
  }
  const ObjectiveResult<double> res = objective(in, weights);
  RVL_CHECK(std::isfinite(res.total), NumericError, "non-finite loss (" + describe(res.record) + ")");

  std::vector<std::pair<ad::Var, Matrix>> seeds{{u, res.grad.image_embeddings}, {v, res.grad.text_embeddings}};
  if (demographic) seeds.emplace_back(f, res.grad.image_features);
  tape.backward(seeds);
  BatchGradients out{res.record, res.total, model.params.zeros_like(), temperature_from_log(in.log_temperature)};
  tape.accumulate_param_grads(out.grads);
  // The temperature and heads enter only through the objective, whose gradients are analytic.
  out.grads[kLogTemperature](0, 0) = res.grad.log_temperature;
  if (demographic) {
    out.grads[kHeadSex] = res.grad.w_sex;
    out.grads[kHeadAge] = res.grad.w_age;
  }
  return out;
}

StepLog train_step(TrainState& state, const std::vector<const PretrainSample*>& batch) {
  RVL_CHECK(!batch.empty(), ValidationError, "train_step: empty batch");
  RVL_CHECK(state.step < state.config.total_steps, ConfigError, "train_step: schedule already finished");
  const double lr = lr_at_step(state.step, state.config);
  const auto& aug = state.augmentation;
  const bool augmenting = aug.crop_scale.first < 1.0 || aug.brightness > 0 || aug.contrast > 0 ||
                          aug.saturation > 0 || aug.hflip_prob > 0 || aug.cutout_fraction > 0;
  std::vector<PretrainSample> augmented;
  std::vector<const PretrainSample*> view = batch;
  if (augmenting) {
    augmented.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::mt19937_64 rng(derive_seed(derive_seed(state.config.seed ^ aug.rng_seed, static_cast<std::uint64_t>(state.step)), i));
      PretrainSample s = *batch[i];
      s.image = data::augment(s.image, aug, rng);
      augmented.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) view[i] = &augmented[i];
  }
  BatchGradients g;
  try {
    g = batch_gradients(state.model, state.weights, view);
  } catch (const NumericError& e) {
    throw NumericError("step " + std::to_string(state.step) + ": " + e.what());
  }
  state.optimizer.step(state.model.params, g.grads, lr);
  ema_update(state.ema, state.model.params, state.config.ema_decay);
  StepLog log{state.step, lr, g.temperature, g.record};
  ++state.step;
  return log;
}

namespace {

void save_pair(const TrainState& state, const std::filesystem::path& dir, LoopResult& result) {
  const std::string stem = "step_" + std::to_string(state.step);
  const auto raw = dir / (stem + "_raw.ckpt");
  const auto ema = dir / (stem + "_ema.ckpt");
  state.model.save(raw.string(), json{{"step", state.step}, {"weights", "raw"}});
  ema_model(state).save(ema.string(), json{{"step", state.step}, {"weights", "ema"}});
  result.checkpoints.push_back(raw);
  result.checkpoints.push_back(ema);
}

}  // namespace

LoopResult train_loop(TrainState& state, const std::vector<PretrainSample>& samples, const LoopOptions& options) {
  RVL_CHECK(!samples.empty() || state.config.total_steps == 0, ValidationError, "train_loop: no samples");
  if (state.weights.variant == Variant::demographic) {
    const bool any = std::any_of(samples.begin(), samples.end(), [](const PretrainSample& s) { return s.age || s.sex; });
    RVL_CHECK(any, ConfigError, "demographic variant needs age or sex on at least one record");
  }
  LoopResult result;
  std::ofstream log_file;
  if (!options.output_dir.empty()) {
    std::filesystem::create_directories(options.output_dir);
    log_file.open(options.output_dir / "loss_log.jsonl");
    if (!log_file) throw IoError("cannot write loss log in " + options.output_dir.string());
  }
  std::mt19937_64 order_rng(derive_seed(state.config.seed, 0x5eed));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(state.config.batch_size), samples.size());

  while (state.step < state.config.total_steps) {
    if (cursor + bs > order.size()) {
      std::shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    std::vector<const PretrainSample*> batch;
    for (std::size_t k = 0; k < bs; ++k) batch.push_back(&samples[order[cursor + k]]);
    cursor += bs;
    const StepLog entry = train_step(state, batch);
    result.log.push_back(entry);
    if (log_file) {
      log_file << json{{"step", entry.step},     {"lr", entry.lr},           {"temperature", entry.temperature},
                       {"clip", entry.loss.clip}, {"align", entry.loss.align}, {"sex", entry.loss.sex},
                       {"age", entry.loss.age},   {"total", entry.loss.total}}
                      .dump()
               << '\n';
    }
    if (!options.output_dir.empty() && options.checkpoint_every > 0 && state.step % options.checkpoint_every == 0 &&
        state.step < state.config.total_steps)
      save_pair(state, options.output_dir, result);
  }
  if (!options.output_dir.empty()) save_pair(state, options.output_dir, result);
  return result;
}

namespace {

void embed_all(const encoders::Model& model, const std::vector<PretrainSample>& samples, Matrix& u, Matrix& v) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  u.resize(n, model.config.embed_dim);
  v.resize(n, model.config.embed_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    u.row(i) = encoders::encode_image(model, samples[static_cast<std::size_t>(i)].image).embedding.transpose();
    v.row(i) = encoders::encode_text(model, samples[static_cast<std::size_t>(i)].tokens).transpose();
  }
}

}  // namespace

double retrieval_top1(const encoders::Model& model, const std::vector<PretrainSample>& samples) {
  RVL_CHECK(!samples.empty(), ValidationError, "retrieval_top1: no samples");
  Matrix u, v;
  embed_all(model, samples, u, v);
  const Matrix s = u * v.transpose();
  int hits = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best = 0;
    s.row(i).maxCoeff(&best);
    hits += best == i;
  }
  return static_cast<double>(hits) / static_cast<double>(s.rows());
}

double evaluate_clip_loss(const encoders::Model& model, const std::vector<PretrainSample>& samples) {
  Matrix u, v;
  embed_all(model, samples, u, v);
  const double log_tau = model.params.contains(kLogTemperature) ? model.params[kLogTemperature](0, 0)
                                                                 : std::log(kInitTemperature);
  return clip_loss(similarity_matrix<double>(u, v, temperature_from_log(log_tau)));
}

encoders::Model ema_model(const TrainState& state) {
  encoders::Model m = state.model;
  m.params = state.ema;
  return m;
}

}  // namespace retinavl::pretraining
