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

#include "retinavl/adaptation/classifier.hpp"

#include "retinavl/core/types.hpp"
#include "retinavl/pretraining/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace retinavl::adaptation {

using data::LabelMode;

bool ProbeConfig::uses_mixup() const {
  switch (mixup) {
    case MixupMode::off: return false;
    case MixupMode::fine_tune_only: return !probing();
    case MixupMode::always: return true;
  }
  return false;
}

void ProbeConfig::validate() const {
  RVL_CHECK(epochs >= 1, ConfigError, "epochs must be at least 1");
  RVL_CHECK(batch_size >= 1, ConfigError, "batch_size must be at least 1");
  RVL_CHECK(head_lr > 0, ConfigError, "head_lr must be positive");
  RVL_CHECK(encoder_lr >= 0, ConfigError, "encoder_lr must be non-negative");
  RVL_CHECK(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, ConfigError, "betas must lie in [0, 1)");
  RVL_CHECK(weight_decay >= 0, ConfigError, "weight_decay must be non-negative");
  RVL_CHECK(!uses_mixup() || mixup_alpha > 0, ConfigError, "mixup_alpha must be positive");
}

ProbeConfig ProbeConfig::linear_probe() { return {}; }

ProbeConfig ProbeConfig::fine_tune_ocular() {
  ProbeConfig c;
  c.encoder_lr = 5e-7;
  return c;
}

ProbeConfig ProbeConfig::fine_tune_oculomics() {
  ProbeConfig c;
  c.encoder_lr = 5e-6;
  c.features = FeatureSource::pooled;
  return c;
}

void TaskLabels::validate() const {
  RVL_CHECK(labels.size() > 0, ValidationError, "no labels");
  RVL_CHECK((labels.array() == 0 || labels.array() == 1).all(), ValidationError, "labels must be 0/1 indicators");
  if (mode == LabelMode::single_label)
    RVL_CHECK((labels.rowwise().sum().array() == 1).all(), ValidationError,
              "single-label rows need exactly one positive class");
}

double checkpoint_score(double auroc, double aupr) {
  RVL_CHECK(auroc >= 0 && auroc <= 1 && aupr >= 0 && aupr <= 1, ValidationError,
            "checkpoint_score inputs must lie in [0, 1]");
  return auroc + 0.5 * aupr;
}

std::size_t select_checkpoint(const std::vector<std::pair<double, double>>& trace) {
  RVL_CHECK(!trace.empty(), ValidationError, "select_checkpoint: empty trace");
  std::size_t best = 0;
  double best_score = checkpoint_score(trace[0].first, trace[0].second);
  for (std::size_t i = 1; i < trace.size(); ++i) {
    const double s = checkpoint_score(trace[i].first, trace[i].second);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  return best;
}

std::vector<Eigen::Index> subsample_labels(const metrics::Labels& class_index, int num_classes, double fraction,
                                           std::uint64_t seed) {
  RVL_CHECK(fraction > 0 && fraction <= 1, ConfigError, "fraction must lie in (0, 1]");
  RVL_CHECK(num_classes >= 1, ConfigError, "num_classes must be at least 1");
  std::vector<std::vector<Eigen::Index>> by_class(static_cast<std::size_t>(num_classes));
  for (Eigen::Index i = 0; i < class_index.size(); ++i) {
    RVL_CHECK(class_index(i) >= 0 && class_index(i) < num_classes, ValidationError,
              "class index " + std::to_string(class_index(i)) + " out of range");
    by_class[static_cast<std::size_t>(class_index(i))].push_back(i);
  }
  std::vector<Eigen::Index> kept;
  for (int c = 0; c < num_classes; ++c) {
    auto& rows = by_class[static_cast<std::size_t>(c)];
    RVL_CHECK(!rows.empty(), ValidationError, "class " + std::to_string(c) + " has no samples");
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(rows.size()))));
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    std::shuffle(rows.begin(), rows.end(), rng);
    kept.insert(kept.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

ParameterSet init_head(Eigen::Index features, Eigen::Index classes) {
  ParameterSet head;
  head.add("w", Matrix::Zero(features, classes));
  head.add("b", Matrix::Zero(1, classes));
  return head;
}

namespace {

Matrix logits_of(const Matrix& features, const ParameterSet& head) {
  RVL_CHECK(features.cols() == head["w"].rows(), ShapeError,
            "head expects " + std::to_string(head["w"].rows()) + " features, got " + std::to_string(features.cols()));
  return (features * head["w"]).rowwise() + head["b"].row(0);
}

Matrix softmax(const Matrix& z) {
  Matrix p = z.colwise() - z.rowwise().maxCoeff();
  p = p.array().exp();
  return p.array().colwise() / p.rowwise().sum().array();
}

Matrix sigmoid(const Matrix& z) { return z.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }); }

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

Matrix predict_proba(const Matrix& features, const ParameterSet& head, LabelMode mode) {
  const Matrix z = logits_of(features, head);
  return mode == LabelMode::single_label ? softmax(z) : sigmoid(z);
}

HeadLoss head_loss(const Matrix& logits, const Matrix& targets, LabelMode mode) {
  RVL_CHECK(logits.rows() == targets.rows() && logits.cols() == targets.cols(), ShapeError,
            "head_loss: logits and targets differ in shape");
  const double n = static_cast<double>(logits.rows());
  HeadLoss out;
  if (mode == LabelMode::single_label) {
    const Vector mx = logits.rowwise().maxCoeff();
    const Vector lse = mx.array() + (logits.colwise() - mx).array().exp().rowwise().sum().log();
    const Matrix logp = logits.colwise() - lse;
    out.value = -(targets.cwiseProduct(logp)).sum() / n;
    out.d_logits = (softmax(logits) - targets) / n;
  } else {
    double total = 0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      const double z = logits(i), y = targets(i);
      total += y * softplus(-z) + (1 - y) * softplus(z);
    }
    out.value = total / n;
    out.d_logits = (sigmoid(logits) - targets) / n;
  }
  return out;
}

Matrix extract_features(const encoders::Model& model, const std::vector<Image>& images, FeatureSource source) {
  RVL_CHECK(!images.empty(), ValidationError, "extract_features: no images");
  Matrix out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto enc = encoders::encode_image(model, images[i]);
    const Vector& f = source == FeatureSource::embedding ? enc.embedding : enc.features;
    if (i == 0) out.resize(static_cast<Eigen::Index>(images.size()), f.size());
    out.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  return out;
}

std::pair<double, double> validation_metrics(const Matrix& probabilities, const TaskLabels& targets) {
  metrics::ScoreSet set;
  set.scores = probabilities;
  set.labels = targets.labels;
  std::vector<std::optional<double>> ro, pr;
  for (Eigen::Index c = 0; c < set.columns(); ++c) {
    const Eigen::Index pos = set.labels.col(c).sum();
    if (pos == 0 || pos == set.size()) continue;
    ro.push_back(metrics::auroc(set.scores.col(c), set.labels.col(c)));
    pr.push_back(metrics::aupr(set.scores.col(c), set.labels.col(c)));
  }
  RVL_CHECK(!ro.empty(), UndefinedMetricError, "validation set has no class with both outcomes");
  return {metrics::macro_average(ro).value, metrics::macro_average(pr).value};
}

ParameterSet vision_params(const encoders::Model& model) {
  ParameterSet out;
  for (const auto& [name, m] : model.params)
    if (name.rfind("visual.", 0) == 0) out.add(name, m);
  return out;
}

encoders::Model with_encoder(const encoders::Model& model, const ParameterSet& encoder) {
  encoders::Model out = model;
  for (const auto& [name, m] : encoder) {
    RVL_CHECK(out.params.contains(name), ConfigError, "encoder parameter " + name + " not in model");
    out.params[name] = m;
  }
  return out;
}

namespace {

pretraining::AdamWOptions adamw_options(const ProbeConfig& c) {
  pretraining::AdamWOptions o;
  o.beta1 = c.beta1;
  o.beta2 = c.beta2;
  o.epsilon = 1e-8;
  o.weight_decay = c.weight_decay;
  return o;
}

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(alpha, 1.0);
  const double a = g(rng), b = g(rng);
  return a + b > 0 ? a / (a + b) : 0.5;
}

std::vector<std::vector<Eigen::Index>> epoch_batches(Eigen::Index n, int batch_size, std::mt19937_64& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Eigen::Index>> out;
  for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(batch_size))
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + static_cast<std::size_t>(batch_size))));
  return out;
}

// Shared epoch bookkeeping: evaluation, selection and abort on a non-finite loss.
struct Selector {
  ClassifierResult result;
  double best = -1;

  void finish_epoch(int epoch, double loss, const Matrix& val_proba, const TaskLabels& val, const ParameterSet& head,
                    const ParameterSet& encoder) {
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss;
    if (!std::isfinite(loss)) {
      result.log.push_back(e);
      throw TrainingAborted("training loss became non-finite at epoch " + std::to_string(epoch), result.log);
    }
    std::tie(e.val_auroc, e.val_aupr) = validation_metrics(val_proba, val);
    e.score = checkpoint_score(e.val_auroc, e.val_aupr);
    result.log.push_back(e);
    if (e.score > best) {
      best = e.score;
      result.best_epoch = epoch;
      result.head = head;
      result.encoder = encoder;
    }
  }
};

Matrix gather(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

ClassifierResult train_probe(const Matrix& train_features, const TaskLabels& train, const Matrix& val_features,
                             const TaskLabels& val, const ProbeConfig& config) {
  config.validate();
  train.validate();
  val.validate();
  RVL_CHECK(train_features.rows() == train.size() && val_features.rows() == val.size(), ShapeError,
            "one feature row per sample required");
  RVL_CHECK(train.classes() == val.classes() && train.mode == val.mode, ShapeError, "train and val tasks differ");
  ParameterSet head = init_head(train_features.cols(), train.classes());
  pretraining::AdamW opt(adamw_options(config));
  std::mt19937_64 rng(derive_seed(config.seed, 0xb10b));
  const Matrix targets = train.labels.cast<double>();
  Selector sel;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss = 0;
    for (const auto& batch : epoch_batches(train.size(), config.batch_size, rng)) {
      Matrix x = gather(train_features, batch);
      Matrix y = gather(targets, batch);
      if (config.uses_mixup()) {
        const double lam = sample_beta(config.mixup_alpha, rng);
        std::vector<Eigen::Index> perm(batch.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        x = lam * x + (1 - lam) * gather(x, perm);
        y = lam * y + (1 - lam) * gather(y, perm);
      }
      const HeadLoss l = head_loss(logits_of(x, head), y, train.mode);
      ParameterSet grads;
      grads.add("w", x.transpose() * l.d_logits);
      grads.add("b", l.d_logits.colwise().sum());
      opt.step(head, grads, config.head_lr);
      loss += l.value * static_cast<double>(batch.size());
    }
    sel.finish_epoch(epoch, loss / static_cast<double>(train.size()), predict_proba(val_features, head, val.mode), val,
                     head, {});
  }
  return sel.result;
}

ClassifierResult train_classifier(const encoders::Model& model, const ImageDataset& train, const ImageDataset& val,
                                  const ProbeConfig& config) {
  config.validate();
  RVL_CHECK(train.images.size() == static_cast<std::size_t>(train.targets.size()) &&
                val.images.size() == static_cast<std::size_t>(val.targets.size()),
            ShapeError, "one label row per image required");
  if (config.probing()) {
    auto r = train_probe(extract_features(model, train.images, config.features), train.targets,
                         extract_features(model, val.images, config.features), val.targets, config);
    r.encoder = vision_params(model);
    return r;
  }

  train.targets.validate();
  val.targets.validate();
  encoders::Model current = model;
  ParameterSet encoder = vision_params(model);
  const Eigen::Index width = config.features == FeatureSource::embedding ? model.config.embed_dim : model.config.vision.width;
  ParameterSet head = init_head(width, train.targets.classes());
  pretraining::AdamW head_opt(adamw_options(config));
  pretraining::AdamW enc_opt(adamw_options(config));
  std::mt19937_64 rng(derive_seed(config.seed, 0xf17e));
  const Matrix targets = train.targets.labels.cast<double>();
  Selector sel;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss = 0;
    for (const auto& batch : epoch_batches(train.targets.size(), config.batch_size, rng)) {
      std::vector<Image> imgs;
      for (Eigen::Index i : batch) imgs.push_back(train.images[static_cast<std::size_t>(i)]);
      Matrix y = gather(targets, batch);
      if (config.uses_mixup()) {
        const double lam = sample_beta(config.mixup_alpha, rng);
        std::vector<Eigen::Index> perm(batch.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Image> mixed = imgs;
        for (std::size_t i = 0; i < imgs.size(); ++i)
          for (int c = 0; c < imgs[i].channels(); ++c)
            mixed[i][c] = lam * imgs[i][c] + (1 - lam) * imgs[static_cast<std::size_t>(perm[i])][c];
        imgs = std::move(mixed);
        y = lam * y + (1 - lam) * gather(y, perm);
      }
      ad::Tape tape;
      const encoders::Bindings p = tape.bind(encoder);
      const auto h = tape.bind(head, "head.");
      std::vector<ad::Var> rows;
      for (const auto& img : imgs) {
        const auto vo = encoders::vision_forward(p, img, current.config.vision);
        rows.push_back(config.features == FeatureSource::embedding ? ad::l2_normalize_rows(vo.embedding) : vo.features);
      }
      const ad::Var z = ad::add_row(ad::matmul(ad::concat_rows(rows), h.at("w")), h.at("b"));
      const HeadLoss l = head_loss(z.value(), y, train.targets.mode);
      tape.backward({{z, l.d_logits}});
      ParameterSet head_grads = head.zeros_like();
      ParameterSet enc_grads = encoder.zeros_like();
      tape.accumulate_param_grads(head_grads, "head.");
      tape.accumulate_param_grads(enc_grads);
      head_opt.step(head, head_grads, config.head_lr);
      enc_opt.step(encoder, enc_grads, config.encoder_lr);
      loss += l.value * static_cast<double>(batch.size());
    }
    current = with_encoder(model, encoder);
    const Matrix val_features = extract_features(current, val.images, config.features);
    sel.finish_epoch(epoch, loss / static_cast<double>(train.targets.size()),
                     predict_proba(val_features, head, val.targets.mode), val.targets, head, encoder);
  }
  return sel.result;
}

}  // namespace retinavl::adaptation
