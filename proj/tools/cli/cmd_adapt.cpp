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

// probe, finetune, label-curve and segment.

#include "cli/cli.hpp"
#include "cli/common.hpp"

#include "retinavl/adaptation/classifier.hpp"
#include "retinavl/adaptation/segmentation.hpp"
#include "retinavl/core/archive.hpp"
#include "retinavl/core/error.hpp"
#include "retinavl/metrics/stats.hpp"

#include <fstream>

namespace retinavl::cli {

namespace {

using nlohmann::json;

struct Splits {
  data::DatasetManifest train, val, test;
};

Splits splits(const RunContext& ctx) {
  const auto all = data::parse_manifest(ctx.path("manifest"));
  Splits s{all.subset(data::Split::train), all.subset(data::Split::val), all.subset(data::Split::test)};
  RVL_CHECK(!s.train.records.empty() && !s.val.records.empty() && !s.test.records.empty(), ValidationError,
            "manifest needs train, val and test records");
  return s;
}

adaptation::TaskLabels task_of(const data::DatasetManifest& m) {
  adaptation::TaskLabels t{m.label_matrix(), m.schema.mode};
  t.validate();
  return t;
}

std::vector<std::string> ids_of(const data::DatasetManifest& m) {
  std::vector<std::string> ids;
  for (const auto& r : m.records) ids.push_back(r.image_id);
  return ids;
}

adaptation::FeatureSource feature_source(const std::string& s) {
  if (s == "embedding") return adaptation::FeatureSource::embedding;
  if (s == "pooled") return adaptation::FeatureSource::pooled;
  throw ConfigError("features must be embedding or pooled");
}

adaptation::MixupMode mixup_mode(const std::string& s) {
  if (s == "off") return adaptation::MixupMode::off;
  if (s == "fine_tune_only") return adaptation::MixupMode::fine_tune_only;
  if (s == "always") return adaptation::MixupMode::always;
  throw ConfigError("mixup must be off, fine_tune_only or always");
}

void common_probe_settings(const RunContext& ctx, adaptation::ProbeConfig& c) {
  c.epochs = static_cast<int>(ctx.integer("epochs"));
  c.batch_size = static_cast<int>(ctx.integer("batch-size"));
  c.head_lr = ctx.number("head-lr");
  c.weight_decay = ctx.number("weight-decay");
  c.mixup = mixup_mode(ctx.text("mixup"));
  c.mixup_alpha = ctx.number("mixup-alpha");
  c.seed = ctx.seed();
  c.validate();
}

std::vector<Param> probe_params() {
  return {{"manifest", Kind::path, nullptr, "manifest with train, val and test records"},
          {"model", Kind::path, nullptr, "model checkpoint"},
          {"epochs", Kind::integer, 20, "training epochs"},
          {"batch-size", Kind::integer, 16, "batch size"},
          {"head-lr", Kind::number, 5e-4, "head learning rate"},
          {"weight-decay", Kind::number, 1e-2, "AdamW weight decay"},
          {"mixup", Kind::text, "fine_tune_only", "off, fine_tune_only or always"},
          {"mixup-alpha", Kind::number, 0.2, "mixup Beta parameter"},
          preprocess_param(),
          bootstrap_param()};
}

/// Row strata for label subsampling: identical label rows share a stratum.
metrics::Labels strata(const metrics::LabelMatrix& labels, int& count) {
  std::map<std::vector<int>, int> ids;
  metrics::Labels out(labels.rows());
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    std::vector<int> key;
    for (Eigen::Index c = 0; c < labels.cols(); ++c) key.push_back(labels(i, c));
    out(i) = ids.emplace(key, static_cast<int>(ids.size())).first->second;
  }
  count = static_cast<int>(ids.size());
  return out;
}

adaptation::TaskLabels take(const adaptation::TaskLabels& t, const std::vector<Eigen::Index>& rows) {
  adaptation::TaskLabels out{metrics::LabelMatrix(static_cast<Eigen::Index>(rows.size()), t.classes()), t.mode};
  for (std::size_t i = 0; i < rows.size(); ++i) out.labels.row(static_cast<Eigen::Index>(i)) = t.labels.row(rows[i]);
  return out;
}

Matrix take(const Matrix& m, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

void write_log(const RunContext& ctx, const std::vector<adaptation::EpochLog>& log, int best) {
  Table t({"epoch", "train_loss", "val_auroc", "val_aupr", "score", "selected"});
  for (const auto& e : log)
    t.add({std::to_string(e.epoch), fmt(e.train_loss), fmt(e.val_auroc), fmt(e.val_aupr), fmt(e.score),
           e.epoch == best ? "1" : "0"});
  t.write(ctx.output("train_log.tsv"));
}

/// Test predictions, validation-optimized thresholds and the metric table.
void evaluate(const RunContext& ctx, const Splits& s, const Matrix& val_probs, const Matrix& test_probs) {
  const auto& classes = s.train.schema.classes;
  const auto val_task = task_of(s.val), test_task = task_of(s.test);
  const Vector thresholds = metrics::optimize_thresholds({val_probs, val_task.labels, ids_of(s.val)});
  Table th({"class", "threshold"});
  for (std::size_t c = 0; c < classes.size(); ++c) th.add({classes[c], fmt(thresholds(static_cast<Eigen::Index>(c)))});
  th.write(ctx.output("thresholds.tsv"));
  const metrics::ScoreSet test{test_probs, test_task.labels, ids_of(s.test)};
  score_table(test, classes).write(ctx.output("predictions.tsv"));
  stat_table(classification_reports(test, classes, test_task.mode, thresholds, bootstrap_options(ctx), ctx.log()))
      .write(ctx.output("metrics.tsv"));
}

void save_head(const RunContext& ctx, const ParameterSet& head, const std::string& features,
               const data::LabelSchema& schema) {
  write_archive(ctx.output("head.ckpt").string(),
                {{{"kind", "classifier-head"}, {"features", features}, {"schema", data::to_json(schema)}}, head});
}

void probe(RunContext& ctx) {
  const auto s = splits(ctx);
  const auto model = encoders::Model::load(ctx.text("model"));
  const int side = model.config.vision.image_side;
  const std::string prep = ctx.text("preprocess");
  auto config = adaptation::ProbeConfig::linear_probe();
  common_probe_settings(ctx, config);
  config.features = feature_source(ctx.text("features"));
  Matrix train_x = adaptation::extract_features(model, load_images(s.train, side, prep), config.features);
  auto train_y = task_of(s.train);
  const double fraction = ctx.number("label-fraction");
  if (fraction < 1.0) {
    int n = 0;
    const auto strat = strata(train_y.labels, n);
    const auto rows = adaptation::subsample_labels(strat, n, fraction, derive_seed(ctx.seed(), 3));
    train_x = take(train_x, rows);
    train_y = take(train_y, rows);
  }
  const Matrix val_x = adaptation::extract_features(model, load_images(s.val, side, prep), config.features);
  const Matrix test_x = adaptation::extract_features(model, load_images(s.test, side, prep), config.features);
  const auto result = adaptation::train_probe(train_x, train_y, val_x, task_of(s.val), config);
  write_log(ctx, result.log, result.best_epoch);
  save_head(ctx, result.head, ctx.text("features"), s.train.schema);
  evaluate(ctx, s, adaptation::predict_proba(val_x, result.head, train_y.mode),
           adaptation::predict_proba(test_x, result.head, train_y.mode));
  ctx.log() << "probe selected epoch " << result.best_epoch << " on " << train_y.size() << " training images\n";
}

void finetune(RunContext& ctx) {
  const auto s = splits(ctx);
  const auto model = encoders::Model::load(ctx.text("model"));
  const int side = model.config.vision.image_side;
  const std::string prep = ctx.text("preprocess");
  const std::string preset = ctx.text("preset");
  RVL_CHECK(preset == "ocular" || preset == "oculomics", ConfigError, "preset must be ocular or oculomics");
  auto config = preset == "ocular" ? adaptation::ProbeConfig::fine_tune_ocular()
                                   : adaptation::ProbeConfig::fine_tune_oculomics();
  if (ctx.number("encoder-lr") >= 0) config.encoder_lr = ctx.number("encoder-lr");
  RVL_CHECK(config.encoder_lr > 0, ConfigError, "fine-tuning needs a positive encoder learning rate");
  if (ctx.has("features")) config.features = feature_source(ctx.text("features"));
  common_probe_settings(ctx, config);
  const adaptation::ImageDataset train{load_images(s.train, side, prep), task_of(s.train)};
  const adaptation::ImageDataset val{load_images(s.val, side, prep), task_of(s.val)};
  const auto result = adaptation::train_classifier(model, train, val, config);
  write_log(ctx, result.log, result.best_epoch);
  const auto tuned = adaptation::with_encoder(model, result.encoder);
  tuned.save(ctx.output("model.ckpt").string(), {{"weights", "fine-tuned"}, {"epoch", result.best_epoch}});
  save_head(ctx, result.head, config.features == adaptation::FeatureSource::pooled ? "pooled" : "embedding",
            s.train.schema);
  const Matrix val_x = adaptation::extract_features(tuned, val.images, config.features);
  const Matrix test_x = adaptation::extract_features(tuned, load_images(s.test, side, prep), config.features);
  evaluate(ctx, s, adaptation::predict_proba(val_x, result.head, train.targets.mode),
           adaptation::predict_proba(test_x, result.head, train.targets.mode));
  ctx.log() << "fine-tuning selected epoch " << result.best_epoch << "\n";
}

void label_curve(RunContext& ctx) {
  const auto s = splits(ctx);
  const auto model = encoders::Model::load(ctx.text("model"));
  const int side = model.config.vision.image_side;
  const std::string prep = ctx.text("preprocess");
  auto config = adaptation::ProbeConfig::linear_probe();
  common_probe_settings(ctx, config);
  config.features = feature_source(ctx.text("features"));
  const Matrix train_x = adaptation::extract_features(model, load_images(s.train, side, prep), config.features);
  const Matrix val_x = adaptation::extract_features(model, load_images(s.val, side, prep), config.features);
  const Matrix test_x = adaptation::extract_features(model, load_images(s.test, side, prep), config.features);
  const auto train_y = task_of(s.train), val_y = task_of(s.val), test_y = task_of(s.test);
  int n_strata = 0;
  const auto strat = strata(train_y.labels, n_strata);
  const auto opts = bootstrap_options(ctx);

  Table curve({"fraction", "seed", "n_train", "best_epoch", "metric", "point", "ci_low", "ci_high", "n_resamples"});
  std::map<double, std::vector<double>> auroc_runs;
  for (double f : ctx.numbers("fractions")) {
    for (long seed : ctx.integers("seeds")) {
      const auto rows = adaptation::subsample_labels(strat, n_strata, f, static_cast<std::uint64_t>(seed));
      auto c = config;
      c.seed = static_cast<std::uint64_t>(seed);
      const auto result = adaptation::train_probe(take(train_x, rows), take(train_y, rows), val_x, val_y, c);
      const metrics::ScoreSet test{adaptation::predict_proba(test_x, result.head, train_y.mode), test_y.labels,
                                   ids_of(s.test)};
      auto b = opts;
      b.seed = derive_seed(ctx.seed(), static_cast<std::uint64_t>(seed));
      const std::pair<const char*, metrics::Metric> plan[] = {
          {"macro_auroc", [](const metrics::ScoreSet& x) { return metrics::macro_auroc(x); }},
          {"macro_aupr", [](const metrics::ScoreSet& x) { return metrics::macro_aupr(x); }}};
      for (const auto& [name, metric] : plan) {
        const auto r = metrics::bootstrap_ci(metric, test, b);
        curve.add({fmt(f), std::to_string(seed), std::to_string(rows.size()), std::to_string(result.best_epoch), name,
                   fmt(r.point), fmt(r.ci_low), fmt(r.ci_high), std::to_string(r.n_resamples)});
        if (std::string(name) == "macro_auroc") auroc_runs[f].push_back(r.point);
      }
    }
  }
  curve.write(ctx.output("curve.tsv"));

  if (auroc_runs.size() > 1 && ctx.integers("seeds").size() > 1) {
    const auto& [ref_f, ref] = *auroc_runs.rbegin();
    Table t({"fraction", "reference_fraction", "mean_auroc", "reference_mean_auroc", "t", "dof", "p_value"});
    const Vector rb = Eigen::Map<const Vector>(ref.data(), static_cast<Eigen::Index>(ref.size()));
    for (const auto& [f, runs] : auroc_runs) {
      if (f == ref_f) continue;
      const Vector ra = Eigen::Map<const Vector>(runs.data(), static_cast<Eigen::Index>(runs.size()));
      try {
        const auto tt = metrics::t_test_two_sided(ra, rb);
        t.add({fmt(f), fmt(ref_f), fmt(ra.mean()), fmt(rb.mean()), fmt(tt.t), fmt(tt.dof), fmt(tt.p_value)});
      } catch (const Error& e) {
        ctx.log() << "t-test for fraction " << fmt(f) << " skipped: " << e.what() << "\n";
      }
    }
    t.write(ctx.output("ttest.tsv"));
  }
  ctx.log() << "label curve over " << auroc_runs.size() << " fractions\n";
}

struct SegItem {
  std::string id;
  std::filesystem::path image, mask;
  data::Split split = data::Split::train;
};

std::vector<SegItem> read_seg_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<SegItem> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      SegItem it;
      it.image = path.parent_path() / j.at("image").get<std::string>();
      it.mask = path.parent_path() / j.at("mask").get<std::string>();
      it.id = j.value("id", it.image.stem().string());
      it.split = data::parse_split(j.value("split", "train"));
      out.push_back(std::move(it));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void segment(RunContext& ctx) {
  auto model = encoders::Model::load(ctx.text("model"));
  const std::string preset = ctx.text("head");
  RVL_CHECK(preset == "tiny" || preset == "reference", ConfigError, "head must be tiny or reference");
  auto cfg = preset == "tiny" ? adaptation::SegHeadConfig::tiny() : adaptation::SegHeadConfig::reference();
  cfg.patch_side = model.config.vision.patch_side;
  cfg.input_side = ctx.integer("input-side") > 0 ? static_cast<int>(ctx.integer("input-side"))
                                                 : model.config.vision.image_side;
  const auto taps = ctx.integers("taps");
  cfg.tap_layers = taps.empty() ? model.config.vision.tap_layers : std::vector<int>(taps.begin(), taps.end());
  const auto widths = ctx.integers("decoder-channels");
  std::vector<int> channels(widths.begin(), widths.end());
  if (channels.empty())
    for (std::size_t k = 0; k < cfg.tap_layers.size(); ++k)
      channels.push_back(cfg.decoder_channels[std::min(k, cfg.decoder_channels.size() - 1)]);
  cfg.decoder_channels = channels;
  cfg.dice_weight = ctx.number("dice-weight");
  cfg.focal_weight = ctx.number("focal-weight");
  cfg.validate(model.config.vision);
  if (cfg.input_side != model.config.vision.image_side) model = encoders::with_image_side(model, cfg.input_side);

  adaptation::SegmentationData train, val, test;
  std::vector<std::string> test_ids;
  for (const auto& it : read_seg_list(ctx.path("list"))) {
    auto& dest = it.split == data::Split::train ? train : it.split == data::Split::val ? val : test;
    dest.images.push_back(load_for_model(it.image, cfg.input_side, "none"));
    dest.targets.push_back(adaptation::mask_targets(read_mask(it.mask, cfg.input_side, cfg.input_side)));
    if (it.split == data::Split::test) test_ids.push_back(it.id);
  }
  RVL_CHECK(!train.images.empty() && !val.images.empty(), ValidationError, "segment needs train and val items");
  const int channels_in = train.images.front().channels();

  adaptation::SegTrainConfig tc;
  tc.epochs = static_cast<int>(ctx.integer("epochs"));
  tc.batch_size = static_cast<int>(ctx.integer("batch-size"));
  tc.lr = ctx.number("lr");
  tc.weight_decay = ctx.number("weight-decay");
  tc.seed = ctx.seed();
  const auto init = adaptation::SegmentationHead::init(cfg, model.config.vision.width, derive_seed(ctx.seed(), 4),
                                                       channels_in);
  const auto result = adaptation::train_segmenter(model, init, train, val, tc);
  Table log({"epoch", "train_loss", "val_dice", "selected"});
  for (const auto& e : result.log)
    log.add({std::to_string(e.epoch), fmt(e.train_loss), fmt(e.val_dice), e.epoch == result.best_epoch ? "1" : "0"});
  log.write(ctx.output("train_log.tsv"));
  write_archive(ctx.output("seg_head.ckpt").string(),
                {{{"kind", "segmentation-head"},
                  {"tap_layers", cfg.tap_layers},
                  {"decoder_channels", cfg.decoder_channels},
                  {"image_channels", cfg.image_channels},
                  {"input_side", cfg.input_side},
                  {"patch_side", cfg.patch_side}},
                 result.head});

  if (test.images.empty()) {
    ctx.log() << "no test items; best validation Dice " << fmt(result.best_val_dice) << "\n";
    return;
  }
  const adaptation::SegmentationHead head(cfg, result.head, model.config.vision.width, channels_in);
  const auto feats = adaptation::frozen_features(model, cfg, test.images);
  Table per({"id", "dice", "iou"});
  std::vector<double> dice, iou;
  for (std::size_t i = 0; i < test.images.size(); ++i) {
    const Matrix logits = adaptation::segmentation_forward(head, feats[i], test.images[i]);
    const auto side = cfg.input_side;
    metrics::Mask pred(side, side), gt(side, side);
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        pred(y, x) = logits(y * side + x, 0) > 0;
        gt(y, x) = test.targets[i](y * side + x, 0) > 0.5;
      }
    try {
      const auto d = metrics::dice_iou(pred, gt);
      per.add({test_ids[i], fmt(d.dice), fmt(d.iou)});
      dice.push_back(d.dice);
      iou.push_back(d.iou);
    } catch (const UndefinedMetricError&) {
      per.add({test_ids[i], "", ""});
      ctx.log() << test_ids[i] << ": prediction and mask both empty, not scored\n";
    }
    if (ctx.flag("write-masks")) {
      Image out(1, side, side);
      out[0] = pred.cast<double>();
      write_png(out, ctx.output("masks/" + test_ids[i] + ".png"));
    }
  }
  per.write(ctx.output("segmentation.tsv"));
  if (dice.empty()) return;
  const auto opts = bootstrap_options(ctx);
  stat_table({mean_report("mean_dice", dice, opts), mean_report("mean_iou", iou, opts)})
      .write(ctx.output("metrics.tsv"));
  ctx.log() << "segmentation best epoch " << result.best_epoch << ", val Dice " << fmt(result.best_val_dice) << "\n";
}

}  // namespace

Command probe_command() {
  auto p = probe_params();
  p.push_back({"features", Kind::text, "embedding", "embedding or pooled"});
  p.push_back({"label-fraction", Kind::number, 1.0, "fraction of training labels to keep"});
  return {"probe", "linear probe on frozen features", p, probe};
}

Command finetune_command() {
  auto p = probe_params();
  p.push_back({"preset", Kind::text, "ocular", "ocular (encoder lr 5e-7) or oculomics (5e-6, pooled features)"});
  p.push_back({"encoder-lr", Kind::number, -1.0, "encoder learning rate (negative: preset)"});
  p.push_back({"features", Kind::text, "", "embedding or pooled (default: preset)"});
  return {"finetune", "full fine-tuning of the vision encoder with a linear head", p, finetune};
}

Command label_curve_command() {
  auto p = probe_params();
  p.push_back({"features", Kind::text, "embedding", "embedding or pooled"});
  p.push_back({"fractions", Kind::numbers, json::array({0.1, 0.3, 0.5, 0.7}), "training label fractions"});
  p.push_back({"seeds", Kind::integers, json::array({0, 1, 2, 3, 4}), "subsampling and training seeds"});
  return {"label-curve", "linear-probe metrics across training label fractions", p, label_curve};
}

Command segment_command() {
  return {"segment",
          "train a segmentation head on frozen encoder layers",
          {{"list", Kind::path, nullptr, "JSON lines of {image, mask, split[, id]}"},
           {"model", Kind::path, nullptr, "model checkpoint"},
           {"head", Kind::text, "reference", "decoder preset: reference or tiny"},
           {"input-side", Kind::integer, 0, "input side (0: the encoder's)"},
           {"taps", Kind::integers, json::array(), "encoder layers to tap (default: the encoder's)"},
           {"decoder-channels", Kind::integers, json::array(), "decoder width per level (default: preset)"},
           {"dice-weight", Kind::number, 1.0, "Dice loss weight"},
           {"focal-weight", Kind::number, 1.0, "focal loss weight"},
           {"epochs", Kind::integer, 100, "training epochs"},
           {"batch-size", Kind::integer, 4, "batch size"},
           {"lr", Kind::number, 1e-3, "learning rate"},
           {"weight-decay", Kind::number, 1e-4, "AdamW weight decay"},
           {"write-masks", Kind::flag, false, "write predicted test masks"},
           bootstrap_param()},
          segment};
}

}  // namespace retinavl::cli
