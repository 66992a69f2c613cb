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

// UNETR-style segmentation head on frozen intermediate encoder features.
//
// Every tap layer's patch tokens are projected to a small channel width. The
// deepest projection starts the decoder at grid resolution; each further level
// doubles the resolution, concatenates the next shallower tap (resized to
// match) and applies a 3x3 convolution. The last level is resized to the input
// side, joined with a full-resolution convolution of the image, and a final
// 3x3 convolution yields per-class logits. Feature maps are (pixels x channels)
// matrices in row-major pixel order, so resizing and convolution are sparse
// constant operators on the tape.

#pragma once

#include "retinavl/core/autodiff.hpp"
#include "retinavl/core/image.hpp"
#include "retinavl/core/params.hpp"
#include "retinavl/encoders/encoders.hpp"
#include "retinavl/metrics/metrics.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace retinavl::adaptation {

struct SegHeadConfig {
  std::vector<int> tap_layers{6, 12, 18, 24};
  /// Decoder width per level, deepest tap first; one entry per tap layer.
  std::vector<int> decoder_channels{64, 32, 16, 8};
  /// Width of the full-resolution image branch; 0 disables it.
  int image_channels = 8;
  int input_side = 448;
  int patch_side = 14;
  int num_classes = 1;
  double dice_weight = 1.0;
  double focal_weight = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;

  int grid() const { return input_side / patch_side; }
  /// Side of decoder level k (grid * 2^k).
  int level_side(std::size_t k) const { return grid() << k; }
  void validate() const;
  /// Also checks the taps and widths against an encoder.
  void validate(const encoders::VisionEncoderConfig& encoder) const;

  static SegHeadConfig reference();
  /// Taps {1, 2} of the tiny encoder, 64 px input.
  static SegHeadConfig tiny();
};

class SegmentationHead {
 public:
  SegmentationHead(SegHeadConfig config, ParameterSet params, int encoder_width, int image_channels_in = 3);
  static SegmentationHead init(const SegHeadConfig& config, int encoder_width, std::uint64_t seed,
                               int image_channels_in = 3);

  const SegHeadConfig& config() const { return config_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  /// Pixels x classes logits. `layer_features` maps tap layer to (G*G) x width tokens.
  ad::Var forward(ad::Tape& tape, const std::map<std::string, ad::Var>& head,
                  const std::map<int, Matrix>& layer_features, const Image& image) const;

 private:
  struct Operators {
    std::vector<std::vector<ad::SparseMatrix>> level_shifts;  ///< per decoder level, the 9 conv taps
    std::vector<ad::SparseMatrix> level_up;      ///< level k-1 -> level k resize
    std::vector<ad::SparseMatrix> skip_up;       ///< grid -> level k resize
    ad::SparseMatrix out_up;                     ///< last level -> input side
    std::vector<ad::SparseMatrix> out_shifts;
  };

  SegHeadConfig config_;
  ParameterSet params_;
  int encoder_width_;
  int image_channels_in_;
  Operators ops_;
};

/// Row-major (pixel x channel) matrix of an image.
Matrix pixel_matrix(const Image& image);
/// Sparse bilinear resize (half-pixel centers) between square row-major grids.
ad::SparseMatrix resize_operator(int from_side, int to_side);
/// Shift with zero padding: (S X)[y, x] = X[y + dy, x + dx].
ad::SparseMatrix shift_operator(int side, int dy, int dx);

/// Per-class H x W logit maps of a (pixels x classes) matrix.
std::vector<Matrix> logit_maps(const Matrix& logits, int side);

/// (pixels x classes) logits for one image from frozen features.
Matrix segmentation_forward(const SegmentationHead& head, const std::map<int, Matrix>& layer_features,
                            const Image& image);

struct SegLoss {
  double value = 0;
  double dice = 0;   ///< soft-Dice loss, mean over classes
  double focal = 0;  ///< mean over pixels and classes
  Matrix d_logits;
};

/// Weighted soft-Dice plus focal loss. Columns of `logits` and `targets` are classes.
SegLoss seg_loss(const Matrix& logits, const Matrix& targets, const SegHeadConfig& weights);

/// Pixels x 1 target column of a binary mask.
Matrix mask_targets(const metrics::Mask& mask);

struct SegmentationData {
  std::vector<Image> images;
  std::vector<Matrix> targets;  ///< per image, pixels x classes indicators
};

struct SegTrainConfig {
  int epochs = 100;
  int batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  void validate() const;
};

struct SegEpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_dice = 0;
};

struct SegmenterResult {
  ParameterSet head;  ///< best validation Dice
  std::vector<SegEpochLog> log;
  int best_epoch = 0;
  double best_val_dice = 0;
};

/// Mean Dice of thresholded (p >= 0.5) predictions over images and classes;
/// an image where prediction and target are both empty scores 1.
double hard_dice(const std::vector<Matrix>& logits, const std::vector<Matrix>& targets);

/// Tap-layer features of the frozen encoder, resized to the head's input side.
std::vector<std::map<int, Matrix>> frozen_features(const encoders::Model& model, const SegHeadConfig& config,
                                                   const std::vector<Image>& images);

/// Trains the head with the encoder frozen; keeps the epoch with the best val Dice (earliest on ties).
SegmenterResult train_segmenter(const encoders::Model& model, const SegmentationHead& head,
                                const SegmentationData& train, const SegmentationData& val,
                                const SegTrainConfig& config);

}  // namespace retinavl::adaptation
