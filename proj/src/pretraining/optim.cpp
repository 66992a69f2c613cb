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

#include "retinavl/pretraining/optim.hpp"

#include "retinavl/core/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace retinavl::pretraining {

void TrainConfig::validate() const {
  RVL_CHECK(peak_lr >= 0 && std::isfinite(peak_lr), ConfigError, "peak_lr must be finite and >= 0");
  RVL_CHECK(weight_decay >= 0, ConfigError, "weight_decay must be >= 0");
  RVL_CHECK(betas.first >= 0 && betas.first < 1 && betas.second >= 0 && betas.second < 1, ConfigError,
            "betas must lie in [0, 1)");
  RVL_CHECK(epsilon > 0, ConfigError, "epsilon must be > 0");
  RVL_CHECK(batch_size >= 1, ConfigError, "batch_size must be >= 1");
  RVL_CHECK(total_steps >= 0 && warmup_steps >= 0, ConfigError, "step counts must be >= 0");
  RVL_CHECK(total_steps == 0 || warmup_steps < total_steps, ConfigError, "warmup_steps must be < total_steps");
  RVL_CHECK(ema_decay >= 0 && ema_decay <= 1, ConfigError, "ema_decay must lie in [0, 1]");
  RVL_CHECK(temperature_init > 0, ConfigError, "temperature_init must be > 0");
}

double lr_at_step(int step, const TrainConfig& config) {
  RVL_CHECK(step >= 0 && step <= config.total_steps, ConfigError,
            "step " + std::to_string(step) + " outside [0, " + std::to_string(config.total_steps) + "]");
  if (step < config.warmup_steps)
    return config.peak_lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  const double span = static_cast<double>(config.total_steps - config.warmup_steps);
  if (span <= 0) return config.peak_lr;
  const double progress = static_cast<double>(step - config.warmup_steps) / span;
  return 0.5 * config.peak_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void ema_update(ParameterSet& ema, const ParameterSet& params, double decay) {
  RVL_CHECK(ema.same_layout(params), ShapeError, "ema_update: parameter layouts differ");
  RVL_CHECK(decay >= 0 && decay <= 1, ConfigError, "ema decay must lie in [0, 1]");
  auto src = params.begin();
  for (auto& [name, m] : ema) {
    m = decay * m + (1.0 - decay) * src->second;
    ++src;
  }
}

void AdamW::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  if (m_.size() == 0) {
    m_ = params.zeros_like();
    v_ = params.zeros_like();
  }
  RVL_CHECK(m_.same_layout(params), ShapeError, "AdamW: parameter layout changed between steps");
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Matrix& p = params[name];
    RVL_CHECK(p.rows() == g.rows() && p.cols() == g.cols(), ShapeError, "AdamW: gradient shape for " + name);
    RVL_CHECK(g.allFinite(), NumericError, "AdamW: non-finite gradient for " + name);
    Matrix& m = m_[name];
    Matrix& v = v_[name];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseAbs2();
    const bool is_vector = p.rows() == 1 || p.cols() == 1;
    if (options_.weight_decay > 0 && (options_.decay_vectors || !is_vector)) p *= 1.0 - lr * options_.weight_decay;
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options_.epsilon);
  }
}

}  // namespace retinavl::pretraining
