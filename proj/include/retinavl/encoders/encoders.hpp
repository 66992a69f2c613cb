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

// Vision transformer and causal text transformer sharing one embedding space.
//
// Both towers are pure functions of a ParameterSet. The tape-level forward
// passes are used for training; encode_image and encode_text wrap them with
// frozen parameters for inference.

#pragma once

#include "retinavl/core/autodiff.hpp"
#include "retinavl/core/image.hpp"
#include "retinavl/core/params.hpp"
#include "retinavl/encoders/tokenizer.hpp"

#include "json.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace retinavl::encoders {

struct VisionEncoderConfig {
  int image_side = 336;
  int patch_side = 14;
  int depth = 24;
  int heads = 16;
  int width = 1024;
  std::vector<int> tap_layers{6, 12, 18, 24};
  int channels = 3;

  void validate() const;
  int grid() const { return image_side / patch_side; }
  int patch_count() const { return grid() * grid(); }
};

struct TextEncoderConfig {
  int depth = 12;
  int max_tokens = 128;
  int width = 768;
  int heads = 12;

  void validate() const;
};

struct ModelConfig {
  VisionEncoderConfig vision;
  TextEncoderConfig text;
  int embed_dim = 768;

  void validate() const;
  /// Two-layer, 32-wide towers on 32 px images for tests and desk runs.
  static ModelConfig tiny();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Encoders, tokenizer and parameters travel together.
struct Model {
  ModelConfig config;
  Tokenizer tokenizer;
  ParameterSet params;

  /// Seeded random initialization (normal weights, unit norms, zero biases).
  static Model init(const ModelConfig& config, Tokenizer tokenizer, std::uint64_t seed);
  void save(const std::string& path, const nlohmann::json& extra = {}) const;
  static Model load(const std::string& path);
};

/// Copy of `model` for a new square input side: the patch-position grid is
/// resized bilinearly, the class-token position is kept.
Model with_image_side(const Model& model, int image_side);

/// Tape handles keyed by parameter name.
using Bindings = std::map<std::string, ad::Var>;

struct VisionOutputs {
  ad::Var embedding;     ///< 1 x D projected class token, not normalized
  ad::Var features;      ///< 1 x W class token before projection
  ad::Var patch_tokens;  ///< (G*G) x D projected patch tokens of the last layer
  std::map<int, ad::Var> layer_features;  ///< tap layer -> (G*G) x W patch tokens
};

VisionOutputs vision_forward(const Bindings& p, const Image& image, const VisionEncoderConfig& config);
/// 1 x D projected end-of-text token, not normalized.
ad::Var text_forward(const Bindings& p, const TokenIds& tokens, const TextEncoderConfig& config);

/// Image (C x H x W planes) to (G*G) x (C*P*P) rows, patches in row-major grid order.
Matrix patchify(const Image& image, int patch_side);

struct ImageEncoding {
  Vector embedding;   ///< unit norm
  Vector features;    ///< pre-projection
  Matrix patch_grid;  ///< (G*G) x D
  std::map<int, Matrix> layer_features;
};

ImageEncoding encode_image(const Model& model, const Image& image);
/// Unit-norm text embedding.
Vector encode_text(const Model& model, const TokenIds& tokens);
Vector encode_text(const Model& model, const std::string& text);

/// Embeddings of a set of samples in the shared space.
struct EmbeddingBatch {
  std::vector<std::string> ids;
  Matrix image_embeddings;  ///< N x D, unit rows
  Matrix text_embeddings;   ///< N x D, unit rows (empty when no text)
  Matrix image_features;    ///< N x F
  std::vector<Matrix> patch_grids;
};

/// One line per row: {"id": ..., "embedding": [...]}.
void write_embeddings_jsonl(const std::string& path, const std::vector<std::string>& ids, const Matrix& rows);

}  // namespace retinavl::encoders
