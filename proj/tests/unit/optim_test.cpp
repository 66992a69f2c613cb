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

#include "retinavl/core/error.hpp"
#include "retinavl/pretraining/optim.hpp"

#include <cmath>

using namespace retinavl;
using namespace retinavl::pretraining;

TEST_CASE("learning-rate schedule anchors") {
  TrainConfig c;
  c.total_steps = 1200;
  c.warmup_steps = 200;
  CHECK(lr_at_step(0, c) == 0.0);
  CHECK(lr_at_step(200, c) == 3e-5);
  CHECK(lr_at_step(700, c) == doctest::Approx(1.5e-5).epsilon(1e-12));
  CHECK(lr_at_step(1200, c) == doctest::Approx(0.0).epsilon(1e-18));
  CHECK_THROWS_AS(lr_at_step(1201, c), ConfigError);
  CHECK_THROWS_AS(lr_at_step(-1, c), ConfigError);
  // Continuous at the boundary and non-increasing after it.
  CHECK(std::abs(lr_at_step(199, c) - lr_at_step(200, c)) < 3e-5 / 150);
  for (int s = 200; s < 1200; ++s) CHECK(lr_at_step(s + 1, c) <= lr_at_step(s, c));
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.total_steps = 100;
  c.warmup_steps = 100;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.warmup_steps = 10;
  c.ema_decay = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.ema_decay = 0.995;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("ema update") {
  ParameterSet ema, p;
  ema.add("a", Matrix::Constant(1, 1, 1.0));
  p.add("a", Matrix::Constant(1, 1, 0.0));
  ParameterSet e1 = ema;
  ema_update(e1, p, 0.995);
  CHECK(e1["a"](0, 0) == doctest::Approx(0.995).epsilon(1e-15));
  ParameterSet e2 = ema;
  ema_update(e2, p, 1.0);
  CHECK(e2 == ema);
  ema_update(e2, p, 0.0);
  CHECK(e2 == p);
  ParameterSet other;
  other.add("b", Matrix::Zero(1, 1));
  CHECK_THROWS_AS(ema_update(e2, other, 0.5), ShapeError);
}

TEST_CASE("adamw first step moves each weight by lr against the gradient sign") {
  ParameterSet p, g;
  p.add("w", Matrix::Constant(2, 2, 1.0));
  g.add("w", (Matrix(2, 2) << 0.5, -2.0, 3.0, -0.1).finished());
  AdamW opt({0.9, 0.98, 1e-12, 0.0, false});
  opt.step(p, g, 0.01);
  CHECK(p["w"](0, 0) == doctest::Approx(0.99));
  CHECK(p["w"](0, 1) == doctest::Approx(1.01));
  CHECK(p["w"](1, 0) == doctest::Approx(0.99));
  CHECK(p["w"](1, 1) == doctest::Approx(1.01));
}

TEST_CASE("adamw decays matrices but not vectors by default") {
  ParameterSet p, g;
  p.add("w", Matrix::Constant(2, 2, 1.0));
  p.add("b", Matrix::Constant(1, 2, 1.0));
  g = p.zeros_like();
  AdamW opt({0.9, 0.98, 1e-6, 0.1, false});
  opt.step(p, g, 0.5);
  CHECK(p["w"](0, 0) == doctest::Approx(0.95));
  CHECK(p["b"](0, 0) == 1.0);
}

TEST_CASE("adamw minimises a quadratic") {
  ParameterSet p, g;
  p.add("x", Matrix::Constant(3, 1, 5.0));
  g = p.zeros_like();
  AdamW opt({0.9, 0.999, 1e-8, 0.0, false});
  for (int i = 0; i < 2000; ++i) {
    g["x"] = 2.0 * (p["x"].array() - 1.0).matrix();
    opt.step(p, g, 0.05);
  }
  CHECK((p["x"].array() - 1.0).abs().maxCoeff() < 1e-3);
}
