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

// Learning-rate schedule, parameter averaging and the decoupled-decay optimizer.

#pragma once

#include "retinavl/core/params.hpp"

#include <cstdint>
#include <utility>

namespace retinavl::pretraining {

struct TrainConfig {
  double peak_lr = 3e-5;
  double weight_decay = 1e-3;
  std::pair<double, double> betas{0.9, 0.98};
  double epsilon = 1e-6;
  int batch_size = 512;
  int total_steps = 486400;
  int warmup_steps = 200;
  double ema_decay = 0.995;
  double temperature_init = 0.07;
  std::uint64_t seed = 0;

  /// Throws ConfigError when any field is out of range.
  void validate() const;
};

/// Linear warmup from 0 to peak over warmup_steps, then cosine decay to 0 at total_steps.
double lr_at_step(int step, const TrainConfig& config);

/// ema <- decay * ema + (1 - decay) * params, elementwise.
void ema_update(ParameterSet& ema, const ParameterSet& params, double decay);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-6;
  double weight_decay = 1e-3;
  /// Parameters with a single row or column (biases, norms, scalars) are not decayed.
  bool decay_vectors = false;
};

/// AdamW with bias correction. Moments are created lazily to match the parameter layout.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  /// One update with learning rate lr; every name in grads must exist in params.
  void step(ParameterSet& params, const ParameterSet& grads, double lr);

  long steps() const { return t_; }
  const ParameterSet& first_moment() const { return m_; }
  const ParameterSet& second_moment() const { return v_; }

 private:
  AdamWOptions options_;
  ParameterSet m_;
  ParameterSet v_;
  long t_ = 0;
};

}  // namespace retinavl::pretraining
