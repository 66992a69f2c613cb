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

// Modality-specific preprocessing and training-time augmentation.

#pragma once

#include "retinavl/core/image.hpp"

#include <functional>
#include <optional>
#include <random>
#include <utility>

namespace retinavl::data {

enum class Modality { CFP, FFA, UWF };

Modality parse_modality(const std::string& s);

/// External retina locator (for example a vessel-segmentation tool). Returning nullopt
/// falls back to the intensity threshold.
using CropProvider = std::function<std::optional<Box>(const Image&)>;

/// Pixels whose max-channel intensity exceeds this are foreground.
inline constexpr double kForegroundThreshold = 10.0 / 255.0;

/// Tight bounding box of pixels with max channel > threshold, or nullopt when there are none.
std::optional<Box> foreground_box(const Image& image, double threshold = kForegroundThreshold);

struct PreprocessOptions {
  CropProvider crop_provider;
  double threshold = kForegroundThreshold;
};

/// CFP: crop to the retina box, pad square, resize. FFA: crop background by threshold, pad
/// square, resize. UWF: pad square, resize. Throws UnusableRecordError on an all-background image.
Image preprocess_image(const Image& image, Modality modality, int target_side, const PreprocessOptions& options = {});

struct AugmentationPolicy {
  /// Random-resized-crop area fraction range; {1, 1} disables cropping.
  std::pair<double, double> crop_scale{1.0, 1.0};
  double brightness = 0.0;  ///< multiplicative factor drawn from [1 - b, 1 + b]
  double contrast = 0.0;    ///< blend toward the mean intensity, factor in [1 - c, 1 + c]
  double saturation = 0.0;  ///< blend toward grayscale, factor in [1 - s, 1 + s]
  double hflip_prob = 0.0;
  double cutout_fraction = 0.0;  ///< area of the single zeroed rectangle
  double mixup_alpha = 0.0;      ///< downstream batches only; ignored by augment
  std::uint64_t rng_seed = 0;

  void validate() const;
  /// Crop, jitter, flip and cutout at moderate strengths.
  static AugmentationPolicy standard(std::uint64_t seed = 0);
};

/// Applies crop, flip, color jitter and cutout in that order. Deterministic given the stream state;
/// the all-zero policy returns the input unchanged.
Image augment(const Image& image, const AugmentationPolicy& policy, std::mt19937_64& rng);

/// The rectangle cutout would zero: side lengths round(sqrt(f) * H) by round(sqrt(f) * W).
std::pair<int, int> cutout_extent(int height, int width, double fraction);

}  // namespace retinavl::data
