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

// curate, pretrain and export-embeddings.

#include "cli/cli.hpp"
#include "cli/common.hpp"

#include "retinavl/core/error.hpp"
#include "retinavl/data/laterality.hpp"
#include "retinavl/data/preprocess.hpp"
#include "retinavl/pretraining/trainer.hpp"

#include <fstream>

namespace retinavl::cli {

namespace {

data::KeywordTable keywords(const RunContext& ctx) {
  return ctx.has("keywords") ? data::KeywordTable::load(ctx.path("keywords")) : data::KeywordTable::defaults();
}

void curate(RunContext& ctx) {
  const auto manifest = data::parse_manifest(ctx.path("manifest"), {ctx.flag("check-files")});
  const auto table = keywords(ctx);
  const int side = static_cast<int>(ctx.integer("side"));
  const auto modality = data::parse_modality(ctx.text("modality"));
  data::DatasetManifest curated = manifest;
  curated.records.clear();
  curated.base_dir = ctx.out();
  Table log({"image_id", "eye", "split", "status", "bilateral_default", "reason"});
  std::map<std::string, std::pair<long, long>> per_split;
  for (const auto& r : manifest.records) {
    const std::string split = data::to_string(manifest.split_of(r));
    auto& counts = per_split[split];
    ++counts.first;
    std::string reason;
    bool bilateral = false;
    data::ImageReportPair out = r;
    try {
      if (r.report.laterality == data::Laterality::BOTH) {
        const auto seg = data::segment_report_by_eye(r.report.findings, r.report.impression, table);
        const auto& eye = r.eye == data::Eye::OD ? seg.od : seg.os;
        out.report.findings = eye.findings_text();
        out.report.impression = eye.impression_text();
        bilateral = seg.bilateral_default;
      }
      out.report.laterality = r.eye == data::Eye::OD ? data::Laterality::OD : data::Laterality::OS;
      RVL_CHECK(out.report.trainable(), UnusableRecordError, "findings or impression empty for this eye");
      if (side > 0) {
        const Image img = data::preprocess_image(read_image(manifest.resolve(r)), modality, side);
        const std::string rel = "images/" + r.image_id + ".png";
        write_png(img, ctx.output(rel));
        out.image_path = rel;
      } else {
        out.image_path = std::filesystem::absolute(manifest.resolve(r)).string();
      }
    } catch (const UnusableRecordError& e) {
      reason = e.what();
    } catch (const IoError& e) {
      reason = e.what();
    }
    log.add({r.image_id, data::to_string(r.eye), split, reason.empty() ? "kept" : "excluded",
             bilateral ? "1" : "0", reason});
    if (reason.empty()) {
      ++counts.second;
      curated.records.push_back(std::move(out));
    }
  }
  data::write_manifest(curated, ctx.output("manifest.jsonl"));
  log.write(ctx.output("curation.tsv"));
  Table summary({"split", "records", "kept", "excluded"});
  for (const auto& [split, c] : per_split)
    summary.add({split, std::to_string(c.first), std::to_string(c.second), std::to_string(c.first - c.second)});
  summary.write(ctx.output("summary.tsv"));
  ctx.log() << "curated " << curated.records.size() << " of " << manifest.records.size() << " records\n";
}

encoders::ModelConfig model_config(const RunContext& ctx) {
  if (ctx.text("model-config") == "tiny") return encoders::ModelConfig::tiny();
  std::ifstream in(ctx.path("model-config"));
  RVL_CHECK(static_cast<bool>(in), IoError, "cannot read " + ctx.text("model-config"));
  encoders::ModelConfig c = nlohmann::json::parse(in).get<encoders::ModelConfig>();
  c.validate();
  return c;
}

void pretrain(RunContext& ctx) {
  const auto manifest = load_manifest(ctx);
  encoders::Model model;
  if (ctx.has("init")) {
    model = encoders::Model::load(ctx.text("init"));
  } else {
    encoders::Tokenizer tok;
    if (ctx.has("merges")) {
      tok = encoders::Tokenizer::load(ctx.text("merges"));
    } else if (ctx.integer("learn-merges") > 0) {
      std::vector<std::string> corpus;
      for (const auto& r : manifest.records) corpus.push_back(r.report.text());
      tok = encoders::Tokenizer::learn(corpus, static_cast<int>(ctx.integer("learn-merges")));
    }
    model = encoders::Model::init(model_config(ctx), tok, derive_seed(ctx.seed(), 1));
  }

  pretraining::SampleLoadOptions load;
  load.modality = data::parse_modality(ctx.text("modality"));
  load.keywords = keywords(ctx);
  const auto samples = pretraining::load_pretrain_samples(manifest, model, load);
  Table skipped({"record"});
  for (const auto& s : samples.skipped) skipped.add({s});
  skipped.write(ctx.output("skipped.tsv"));
  RVL_CHECK(!samples.samples.empty(), ValidationError, "no usable training records");

  pretraining::TrainConfig tc;
  tc.peak_lr = ctx.number("peak-lr");
  tc.weight_decay = ctx.number("weight-decay");
  tc.batch_size = static_cast<int>(ctx.integer("batch-size"));
  tc.total_steps = static_cast<int>(ctx.integer("steps"));
  tc.warmup_steps = static_cast<int>(ctx.integer("warmup"));
  tc.ema_decay = ctx.number("ema-decay");
  tc.temperature_init = ctx.number("temperature-init");
  tc.seed = ctx.seed();
  const std::string variant = ctx.text("variant");
  RVL_CHECK(variant == "base" || variant == "demographic", ConfigError, "variant must be base or demographic");
  const auto weights = variant == "base" ? pretraining::LossWeights::base(ctx.number("lambda-align"))
                                         : pretraining::LossWeights::demographic(ctx.number("lambda-align"),
                                                                                 ctx.number("lambda-age"),
                                                                                 ctx.number("lambda-sex"));
  const auto aug = ctx.flag("augment") ? data::AugmentationPolicy::standard(derive_seed(ctx.seed(), 2))
                                       : data::AugmentationPolicy{};
  auto state = pretraining::init_train_state(model, tc, weights, aug);
  pretraining::LoopOptions loop;
  loop.output_dir = ctx.out() / "checkpoints";
  loop.checkpoint_every = static_cast<int>(ctx.integer("checkpoint-every"));
  const auto result = pretraining::train_loop(state, samples.samples, loop);

  Table log({"step", "lr", "temperature", "clip", "align", "sex", "age", "total"});
  for (const auto& s : result.log)
    log.add({std::to_string(s.step), fmt(s.lr), fmt(s.temperature), fmt(s.loss.clip), fmt(s.loss.align),
             fmt(s.loss.sex), fmt(s.loss.age), fmt(s.loss.total)});
  log.write(ctx.output("train_log.tsv"));

  const auto ema = pretraining::ema_model(state);
  state.model.save(ctx.output("model.ckpt").string(), {{"weights", "raw"}, {"step", state.step}});
  ema.save(ctx.output("model_ema.ckpt").string(), {{"weights", "ema"}, {"step", state.step}});
  Table eval({"weights", "retrieval_top1", "clip_loss"});
  eval.add({"raw", fmt(pretraining::retrieval_top1(state.model, samples.samples)),
            fmt(pretraining::evaluate_clip_loss(state.model, samples.samples))});
  eval.add({"ema", fmt(pretraining::retrieval_top1(ema, samples.samples)),
            fmt(pretraining::evaluate_clip_loss(ema, samples.samples))});
  eval.write(ctx.output("eval.tsv"));
  ctx.log() << "trained " << state.step << " steps on " << samples.samples.size() << " pairs\n";
}

void write_rows(const RunContext& ctx, const std::string& name, const std::vector<std::string>& ids,
                const std::vector<Vector>& rows) {
  if (rows.empty()) return;
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  encoders::write_embeddings_jsonl(ctx.output(name).string(), ids, m);
}

void export_embeddings(RunContext& ctx) {
  const auto manifest = load_manifest(ctx);
  const auto model = encoders::Model::load(ctx.text("model"));
  const auto images = load_images(manifest, model.config.vision.image_side, ctx.text("preprocess"));
  std::vector<std::string> ids;
  std::vector<Vector> img, txt, feat;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& r = manifest.records[i];
    ids.push_back(r.image_id);
    const auto enc = encoders::encode_image(model, images[i]);
    img.push_back(enc.embedding);
    if (ctx.flag("features")) feat.push_back(enc.features);
    if (ctx.flag("text")) txt.push_back(encoders::encode_text(model, r.report.text()));
  }
  write_rows(ctx, "image_embeddings.jsonl", ids, img);
  write_rows(ctx, "text_embeddings.jsonl", ids, txt);
  write_rows(ctx, "image_features.jsonl", ids, feat);
  ctx.log() << "exported " << ids.size() << " embeddings\n";
}

}  // namespace

Command curate_command() {
  return {"curate",
          "validate a manifest, split reports by eye and optionally preprocess images",
          {{"manifest", Kind::path, nullptr, "input manifest"},
           {"keywords", Kind::path, "", "laterality keyword table (default: built-in)"},
           {"modality", Kind::text, "CFP", "CFP, FFA or UWF"},
           {"side", Kind::integer, 0, "write preprocessed PNGs at this side (0: keep source images)"},
           {"check-files", Kind::flag, true, "require every image file to exist"}},
          curate};
}

Command pretrain_command() {
  return {"pretrain",
          "contrastive image-report pretraining",
          {{"manifest", Kind::path, nullptr, "training manifest"},
           split_param("train"),
           {"model-config", Kind::text, "tiny", "\"tiny\" or a JSON model configuration"},
           {"init", Kind::path, "", "checkpoint to continue from"},
           {"merges", Kind::path, "", "tokenizer merges file"},
           {"learn-merges", Kind::integer, 0, "learn this many merges from the reports when no merges file"},
           {"modality", Kind::text, "CFP", "CFP, FFA or UWF"},
           {"keywords", Kind::path, "", "laterality keyword table"},
           {"steps", Kind::integer, 500, "optimizer steps"},
           {"batch-size", Kind::integer, 32, "pairs per step"},
           {"warmup", Kind::integer, 20, "linear warmup steps"},
           {"peak-lr", Kind::number, 1e-3, "peak learning rate"},
           {"weight-decay", Kind::number, 1e-3, "AdamW weight decay"},
           {"ema-decay", Kind::number, 0.995, "EMA decay"},
           {"temperature-init", Kind::number, 0.07, "initial temperature"},
           {"variant", Kind::text, "base", "base or demographic"},
           {"lambda-align", Kind::number, 1.0, "alignment loss weight"},
           {"lambda-age", Kind::number, 1.0, "age loss weight (demographic)"},
           {"lambda-sex", Kind::number, 0.1, "sex loss weight (demographic)"},
           {"augment", Kind::flag, false, "apply the standard augmentation policy"},
           {"checkpoint-every", Kind::integer, 0, "intermediate checkpoint interval (0: final only)"}},
          pretrain};
}

Command export_embeddings_command() {
  return {"export-embeddings",
          "write image (and report) embeddings as JSON lines",
          {{"manifest", Kind::path, nullptr, "records to embed"},
           split_param(""),
           {"model", Kind::path, nullptr, "model checkpoint"},
           preprocess_param(),
           {"text", Kind::flag, true, "also embed each record's report"},
           {"features", Kind::flag, false, "also write pre-projection image features"}},
          export_embeddings};
}

}  // namespace retinavl::cli
