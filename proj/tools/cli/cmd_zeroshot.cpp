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

// zeroshot-eval, localize and masking-study.

#include "cli/cli.hpp"
#include "cli/common.hpp"

#include "retinavl/adaptation/classifier.hpp"
#include "retinavl/core/error.hpp"
#include "retinavl/localization/localization.hpp"
#include "retinavl/zeroshot/zeroshot.hpp"

#include <fstream>
#include <random>

namespace retinavl::cli {

namespace {

using nlohmann::json;

Matrix embed_images(const encoders::Model& model, const std::vector<Image>& images) {
  Matrix out(static_cast<Eigen::Index>(images.size()), model.config.embed_dim);
  for (std::size_t i = 0; i < images.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = encoders::encode_image(model, images[i]).embedding.transpose();
  return out;
}

data::LabelSchema trim_schema(const RunContext& ctx, const data::LabelSchema& schema) {
  data::LabelSchema s = schema;
  if (ctx.flag("no-trim")) {
    s.trim_rules.clear();
  } else if (ctx.has("trim")) {
    std::ifstream in(ctx.path("trim"));
    RVL_CHECK(static_cast<bool>(in), IoError, "cannot read " + ctx.text("trim"));
    json rules = json::parse(in);
    if (rules.is_object()) rules = rules.at("trim_rules");
    json j = data::to_json(schema);
    j["trim_rules"] = rules;
    s = data::schema_from_json(j);
  }
  s.validate();
  return s;
}

void zeroshot_eval(RunContext& ctx) {
  const auto manifest = load_manifest(ctx);
  RVL_CHECK(!manifest.records.empty(), ValidationError, "no records to evaluate");
  const auto model = encoders::Model::load(ctx.text("model"));
  const auto& schema = manifest.schema;
  const auto mode = ctx.has("mode") ? data::parse_label_mode(ctx.text("mode")) : schema.mode;

  const auto ensemble = ctx.has("prompts") ? zeroshot::PromptEnsemble::load(ctx.path("prompts")).select(schema.classes)
                                           : zeroshot::PromptEnsemble::from_templates(schema.classes,
                                                                                      ctx.texts("templates"));
  ensemble.save(ctx.output("prompts.resolved.json"));
  const Matrix class_emb = zeroshot::build_class_embeddings(ensemble, model);
  const auto images = load_images(manifest, model.config.vision.image_side, ctx.text("preprocess"));
  auto pm = zeroshot::zero_shot_classify(embed_images(model, images), class_emb, schema.classes, mode);
  for (const auto& r : manifest.records) pm.ids.push_back(r.image_id);

  const auto trimmed = zeroshot::apply_benchmark_trim(manifest.label_matrix(), trim_schema(ctx, schema));
  pm = zeroshot::trim_predictions(pm, trimmed);
  metrics::LabelMatrix labels = trimmed.labels;

  const std::string sep = ctx.text("eye-key-separator");
  if (!sep.empty()) {
    std::vector<std::string> keys;
    for (const auto& id : pm.ids) {
      const auto cut = id.rfind(sep);
      keys.push_back(cut == std::string::npos ? id : id.substr(0, cut));
    }
    const auto grouped = zeroshot::average_by_group(pm, keys);
    metrics::LabelMatrix g(static_cast<Eigen::Index>(grouped.ids.size()), labels.cols());
    std::map<std::string, Eigen::Index> first;
    for (std::size_t i = 0; i < keys.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      auto [it, fresh] = first.emplace(keys[i], row);
      RVL_CHECK(fresh || labels.row(it->second) == labels.row(row), SchemaError,
                "views of " + keys[i] + " carry different labels");
    }
    for (std::size_t k = 0; k < grouped.ids.size(); ++k)
      g.row(static_cast<Eigen::Index>(k)) = labels.row(first.at(grouped.ids[k]));
    pm = grouped;
    labels = g;
  }

  zeroshot::write_predictions_jsonl(ctx.output("predictions.jsonl"), pm);
  metrics::ScoreSet set{pm.scores, labels, pm.ids};
  score_table(set, pm.classes).write(ctx.output("predictions.tsv"));
  const auto reports = classification_reports(set, pm.classes, mode, std::nullopt, bootstrap_options(ctx), ctx.log());
  stat_table(reports).write(ctx.output("metrics.tsv"));
  ctx.log() << "evaluated " << set.size() << " units over " << pm.classes.size() << " classes\n";
}

struct Item {
  std::string id;
  Image image;
  std::optional<metrics::Mask> mask;
};

void localize(RunContext& ctx) {
  const auto model = encoders::Model::load(ctx.text("model"));
  const int side = model.config.vision.image_side;
  const std::string prep = ctx.text("preprocess");
  const bool masks = ctx.has("mask") || ctx.has("mask-dir");
  RVL_CHECK(!masks || prep == "none", ConfigError, "ground-truth masks require --preprocess none");
  RVL_CHECK(ctx.has("image") != ctx.has("manifest"), ConfigError, "give exactly one of --image and --manifest");
  std::vector<Item> items;
  if (ctx.has("image")) {
    Item it{ctx.path("image").stem().string(), load_for_model(ctx.path("image"), side, prep), std::nullopt};
    if (ctx.has("mask")) it.mask = read_mask(ctx.path("mask"), side, side);
    items.push_back(std::move(it));
  } else {
    const auto manifest = load_manifest(ctx);
    const auto images = load_images(manifest, side, prep);
    for (std::size_t i = 0; i < images.size(); ++i) {
      Item it{manifest.records[i].image_id, images[i], std::nullopt};
      if (ctx.has("mask-dir")) {
        const auto p = ctx.path("mask-dir") / (it.id + ".png");
        if (std::filesystem::exists(p)) it.mask = read_mask(p, side, side);
      }
      items.push_back(std::move(it));
    }
  }

  Table table({"id", "min", "max", "threshold", "dice", "iou", "pro"});
  std::vector<double> dice, iou, pro;
  for (const auto& it : items) {
    const auto heat = localization::localize(model, it.image, ctx.text("prompt"));
    localization::write_npy(heat.upsampled, ctx.output("heatmaps/" + it.id + ".npy"));
    if (ctx.flag("overlays"))
      write_png(localization::overlay(it.image, heat.upsampled, ctx.number("alpha")),
                ctx.output("overlays/" + it.id + ".png"));
    std::vector<std::string> row{it.id, fmt(heat.min), fmt(heat.max), "", "", "", ""};
    if (it.mask && it.mask->any()) {
      const auto gt = localization::GroundTruthMask::from_mask(*it.mask);
      const auto best = localization::best_threshold_segmentation(heat.upsampled, gt);
      const double p = localization::pro_score(heat.upsampled, gt, ctx.number("fpr-cap"));
      row[3] = fmt(best.threshold);
      row[4] = fmt(best.dice);
      row[5] = fmt(best.iou);
      row[6] = fmt(p);
      dice.push_back(best.dice);
      iou.push_back(best.iou);
      pro.push_back(p);
    } else if (it.mask) {
      ctx.log() << it.id << ": empty ground-truth mask, not scored\n";
    }
    table.add(row);
  }
  table.write(ctx.output("localization.tsv"));
  if (!dice.empty()) {
    const auto opts = bootstrap_options(ctx);
    stat_table({mean_report("mean_best_dice", dice, opts), mean_report("mean_best_iou", iou, opts),
                mean_report("mean_pro", pro, opts)})
        .write(ctx.output("metrics.tsv"));
  }
  ctx.log() << "localized " << items.size() << " images\n";
}

adaptation::TaskLabels binary_task(const data::DatasetManifest& m, const std::string& cls) {
  adaptation::TaskLabels t;
  t.mode = data::LabelMode::single_label;
  t.labels = metrics::LabelMatrix::Zero(static_cast<Eigen::Index>(m.records.size()), 2);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const int pos = m.records[i].labels.count(cls) ? 1 : 0;
    t.labels(static_cast<Eigen::Index>(i), pos) = 1;
  }
  return t;
}

void masking_study(RunContext& ctx) {
  const auto all = data::parse_manifest(ctx.path("manifest"));
  const std::string cls = ctx.text("class");
  RVL_CHECK(all.schema.index_of(cls) >= 0, ConfigError, "class " + cls + " not in the manifest schema");
  const auto model = encoders::Model::load(ctx.text("model"));
  const int side = model.config.vision.image_side;
  const std::string prep = ctx.text("preprocess");
  const auto train = all.subset(data::Split::train), val = all.subset(data::Split::val),
             test = all.subset(data::Split::test);
  RVL_CHECK(!train.records.empty() && !val.records.empty() && !test.records.empty(), ValidationError,
            "masking-study needs train, val and test records");

  auto probe = adaptation::ProbeConfig::linear_probe();
  probe.epochs = static_cast<int>(ctx.integer("epochs"));
  probe.head_lr = ctx.number("head-lr");
  probe.batch_size = static_cast<int>(ctx.integer("batch-size"));
  probe.seed = ctx.seed();
  const auto src = adaptation::FeatureSource::embedding;
  const auto fitted = adaptation::train_probe(
      adaptation::extract_features(model, load_images(train, side, prep), src), binary_task(train, cls),
      adaptation::extract_features(model, load_images(val, side, prep), src), binary_task(val, cls), probe);
  Table plog({"epoch", "train_loss", "val_auroc", "val_aupr", "score"});
  for (const auto& e : fitted.log)
    plog.add({std::to_string(e.epoch), fmt(e.train_loss), fmt(e.val_auroc), fmt(e.val_aupr), fmt(e.score)});
  plog.write(ctx.output("probe_log.tsv"));

  const localization::ImageClassifier classifier = [&](const std::vector<Image>& imgs) -> Vector {
    return adaptation::predict_proba(adaptation::extract_features(model, imgs, src), fitted.head,
                                     data::LabelMode::single_label)
        .col(1);
  };
  const auto images = load_images(test, side, prep);
  const auto task = binary_task(test, cls);
  const metrics::Labels labels = task.labels.col(1);
  const std::string prompt = ctx.has("prompt") ? ctx.text("prompt") : cls;

  localization::MaskingOptions opts;
  const std::string fill = ctx.text("fill");
  RVL_CHECK(fill == "mean" || fill == "black", ConfigError, "fill must be mean or black");
  opts.fill = fill == "mean" ? localization::MaskFill::dataset_mean : localization::MaskFill::black;
  opts.bootstrap_resamples = static_cast<int>(ctx.integer("bootstrap"));
  opts.seed = ctx.seed();

  Table table({"source", "percentage", "auroc", "ci_low", "ci_high", "masked_pixels_per_image"});
  for (const auto& source : ctx.texts("sources")) {
    std::vector<Matrix> heatmaps;
    if (source == "text") {
      for (const auto& img : images) heatmaps.push_back(localization::localize(model, img, prompt).upsampled);
    } else if (source == "random") {
      std::mt19937_64 rng(derive_seed(ctx.seed(), 7));
      std::uniform_real_distribution<double> u(0, 1);
      for (const auto& img : images) {
        Matrix h(img.height(), img.width());
        for (Eigen::Index k = 0; k < h.size(); ++k) h.data()[k] = u(rng);
        heatmaps.push_back(h);
      }
    } else {
      throw ConfigError("unknown heatmap source " + source + " (text or random)");
    }
    const auto points = localization::masking_study(images, heatmaps, ctx.numbers("percentages"), classifier, labels,
                                                    metrics::auroc, opts);
    for (const auto& p : points)
      table.add({source, fmt(p.percentage), fmt(p.metric), fmt(p.ci_low), fmt(p.ci_high),
                 std::to_string(p.masked_pixels_per_image)});
  }
  table.write(ctx.output("masking.tsv"));
  ctx.log() << "masking study over " << images.size() << " test images\n";
}

}  // namespace

Command zeroshot_eval_command() {
  return {"zeroshot-eval",
          "prompt-ensemble zero-shot classification with benchmark trimming",
          {{"manifest", Kind::path, nullptr, "labelled evaluation manifest"},
           split_param("test"),
           {"model", Kind::path, nullptr, "model checkpoint"},
           {"prompts", Kind::path, "", "prompt ensemble JSON (default: templates)"},
           {"templates", Kind::texts, json::array({"{class}", "suspected {class}"}), "prompt templates"},
           {"trim", Kind::path, "", "trim rules JSON (default: the manifest schema's rules)"},
           {"no-trim", Kind::flag, false, "ignore all trim rules"},
           {"mode", Kind::text, "", "single_label or multi_label (default: schema)"},
           {"eye-key-separator", Kind::text, "", "average views sharing the id prefix before the last separator"},
           preprocess_param(),
           bootstrap_param()},
          zeroshot_eval};
}

Command localize_command() {
  return {"localize",
          "text-prompted similarity heatmaps with optional mask scoring",
          {{"model", Kind::path, nullptr, "model checkpoint"},
           {"prompt", Kind::text, nullptr, "lesion or disease prompt"},
           {"image", Kind::path, "", "single image"},
           {"mask", Kind::path, "", "ground-truth mask for --image"},
           {"manifest", Kind::path, "", "records to localize"},
           split_param(""),
           {"mask-dir", Kind::path, "", "directory of <image_id>.png masks"},
           preprocess_param(),
           {"fpr-cap", Kind::number, 0.3, "PRO false-positive-rate cap"},
           {"alpha", Kind::number, 0.5, "overlay opacity"},
           {"overlays", Kind::flag, true, "write overlay PNGs"},
           bootstrap_param()},
          localize};
}

Command masking_study_command() {
  return {"masking-study",
          "probe AUROC as the most salient pixels are masked",
          {{"manifest", Kind::path, nullptr, "manifest with train, val and test records"},
           {"model", Kind::path, nullptr, "model checkpoint"},
           {"class", Kind::text, nullptr, "positive class"},
           {"prompt", Kind::text, "", "heatmap prompt (default: the class name)"},
           {"sources", Kind::texts, json::array({"text", "random"}), "heatmap sources: text, random"},
           {"percentages", Kind::numbers, json::array({0.0, 0.01, 0.05, 0.1, 0.2}), "masked pixel fractions"},
           {"fill", Kind::text, "mean", "mean or black"},
           {"epochs", Kind::integer, 50, "probe epochs"},
           {"head-lr", Kind::number, 1e-2, "probe learning rate"},
           {"batch-size", Kind::integer, 16, "probe batch size"},
           preprocess_param(),
           bootstrap_param()},
          masking_study};
}

}  // namespace retinavl::cli
