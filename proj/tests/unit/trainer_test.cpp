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

#include "doctest.h"
#include "support/synthetic.hpp"

#include "retinavl/core/error.hpp"
#include "retinavl/pretraining/trainer.hpp"

#include <filesystem>
#include <fstream>

using namespace retinavl;
using namespace retinavl::pretraining;
namespace fs = std::filesystem;

namespace {

encoders::Model small_model() {
  encoders::ModelConfig c = encoders::ModelConfig::tiny();
  c.vision.image_side = 16;
  c.vision.width = 16;
  c.text.width = 16;
  c.text.max_tokens = 16;
  c.embed_dim = 8;
  return encoders::Model::init(c, encoders::Tokenizer(), 4);
}

TrainConfig short_config(int steps) {
  TrainConfig c;
  c.peak_lr = 1e-3;
  c.total_steps = steps;
  c.warmup_steps = steps > 2 ? 2 : 0;
  c.batch_size = 4;
  c.seed = 12;
  return c;
}

std::vector<const PretrainSample*> view(const std::vector<PretrainSample>& s) {
  std::vector<const PretrainSample*> out;
  for (const auto& x : s) out.push_back(&x);
  return out;
}

}  // namespace

TEST_CASE("identical seeds give identical loss streams") {
  const auto model = small_model();
  const auto samples = synthetic::pairs(model, 8, 1);
  auto a = init_train_state(model, short_config(6), LossWeights::base(), data::AugmentationPolicy::standard(3));
  auto b = init_train_state(model, short_config(6), LossWeights::base(), data::AugmentationPolicy::standard(3));
  const auto la = train_loop(a, samples).log;
  const auto lb = train_loop(b, samples).log;
  REQUIRE(la.size() == 6);
  for (std::size_t i = 0; i < la.size(); ++i) {
    CHECK(la[i].loss.total == lb[i].loss.total);
    CHECK(la[i].lr == lb[i].lr);
  }
  CHECK(a.model.params == b.model.params);
  CHECK(a.ema == b.ema);
}

TEST_CASE("zero steps leave the initialization in the checkpoint") {
  const auto model = small_model();
  const auto samples = synthetic::pairs(model, 4, 1);
  TrainConfig c = short_config(0);
  auto state = init_train_state(model, c, LossWeights::base());
  const ParameterSet init = state.model.params;
  const fs::path dir = fs::temp_directory_path() / "rvl_trainer_zero";
  fs::remove_all(dir);
  const auto r = train_loop(state, samples, {dir, 0});
  CHECK(r.log.empty());
  REQUIRE(r.checkpoints.size() == 2);
  CHECK(encoders::Model::load(r.checkpoints[0].string()).params == init);
  CHECK(encoders::Model::load(r.checkpoints[1].string()).params == init);
  fs::remove_all(dir);
}

TEST_CASE("loss log has one line per step and periodic checkpoints") {
  const auto model = small_model();
  const auto samples = synthetic::pairs(model, 8, 1);
  auto state = init_train_state(model, short_config(5), LossWeights::base());
  const fs::path dir = fs::temp_directory_path() / "rvl_trainer_log";
  fs::remove_all(dir);
  const auto r = train_loop(state, samples, {dir, 2});
  std::ifstream in(dir / "loss_log.jsonl");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  CHECK(lines == 5);
  CHECK(r.checkpoints.size() == 6);  // steps 2, 4 and the final step 5, raw and EMA each
  CHECK(fs::exists(dir / "step_4_ema.ckpt"));
  CHECK(fs::exists(dir / "step_5_raw.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("demographic variant needs demographics and trains its heads") {
  const auto model = small_model();
  auto samples = synthetic::pairs(model, 8, 1);
  for (auto& s : samples) s.age = 0.5 * s.age.value() / 20.0;
  auto state = init_train_state(model, short_config(8), LossWeights::demographic());
  CHECK(state.model.params.contains(kHeadSex));
  const auto log = train_loop(state, samples).log;
  CHECK(log.back().loss.age < log.front().loss.age);
  CHECK(state.model.params[kHeadAge].norm() > 0);

  auto bare = samples;
  for (auto& s : bare) {
    s.age.reset();
    s.sex.reset();
  }
  auto state2 = init_train_state(model, short_config(3), LossWeights::demographic());
  CHECK_THROWS_AS(train_loop(state2, bare), ConfigError);
}

TEST_CASE("full-model gradients match finite differences") {
  const auto model = small_model();
  auto samples = synthetic::pairs(model, 3, 7);
  auto state = init_train_state(model, short_config(1), LossWeights::demographic());
  state.model.params[kHeadSex].setConstant(0.01);
  state.model.params[kHeadAge].setConstant(-0.02);
  const auto batch = view(samples);
  const BatchGradients g = batch_gradients(state.model, state.weights, batch);
  double worst = 0;
  for (const std::string name : {"visual.proj", "visual.blocks.1.attn.qkv.w", "text.token_embed", "text.proj",
                                 "text.blocks.0.mlp.fc.w", kLogTemperature, kHeadSex, kHeadAge}) {
    Matrix& w = state.model.params[name];
    const Eigen::Index count = std::min<Eigen::Index>(w.size(), 6);
    for (Eigen::Index k = 0; k < count; ++k) {
      // Token-embedding rows for ids actually used are near the end of the table.
      const Eigen::Index i = name == "text.token_embed" ? w.size() - 1 - k * w.rows() : k;
      const double keep = w.data()[i];
      w.data()[i] = keep + 1e-5;
      const double up = batch_gradients(state.model, state.weights, batch).total;
      w.data()[i] = keep - 1e-5;
      const double down = batch_gradients(state.model, state.weights, batch).total;
      w.data()[i] = keep;
      const double numeric = (up - down) / 2e-5;
      const double analytic = g.grads[name].data()[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max(1e-4, std::abs(numeric) + std::abs(analytic)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("overfitting a tiny batch drives the contrastive loss down") {
  const auto model = small_model();
  const auto samples = synthetic::pairs(model, 8, 5);
  TrainConfig c = short_config(300);
  c.batch_size = 8;
  c.warmup_steps = 10;
  c.peak_lr = 3e-3;
  auto state = init_train_state(model, c, LossWeights::base());
  const auto log = train_loop(state, samples).log;
  CHECK(log.back().loss.clip < 0.5 * log.front().loss.clip);
  CHECK(retrieval_top1(state.model, samples) == 1.0);
}
