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

// Text-guided heatmaps, threshold-swept segmentation scores, PRO and the
// progressive masking study.

#pragma once

#include "retinavl/core/image.hpp"
#include "retinavl/core/types.hpp"
#include "retinavl/encoders/encoders.hpp"
#include "retinavl/metrics/metrics.hpp"
#include "retinavl/metrics/stats.hpp"

#include <filesystem>
#include <functional>
#include <vector>

namespace retinavl::localization {

using metrics::Mask;

/// Thresholds are every distinct value up to this many, else quantile-spaced.
inline constexpr std::size_t kExactSweepLimit = 4096;
inline constexpr std::size_t kQuantileThresholds = 1024;

struct Heatmap {
  Matrix grid;       ///< G x G cosine similarities
  Matrix upsampled;  ///< H x W, bilinear
  double min = 0;    ///< of the upsampled map, before normalization
  double max = 0;

  /// (upsampled - min) / (max - min), or zeros for a constant map.
  Matrix normalized() const;
};

/// Cosine between every patch row and the text embedding, reshaped row-major to side x side.
Matrix similarity_heatmap(const Matrix& patch_grid, const Vector& text_embedding);

/// Bilinear with half-pixel centers. Target must be at least the grid size.
Matrix upsample_heatmap(const Matrix& grid, int height, int width);

/// Heatmap of `prompt` over a preprocessed image, upsampled to the image size.
Heatmap localize(const encoders::Model& model, const Image& image, const std::string& prompt);

/// Binary mask with its 8-connected regions (linear column-major pixel indices).
struct GroundTruthMask {
  Mask mask;
  std::vector<std::vector<Eigen::Index>> regions;

  static GroundTruthMask from_mask(const Mask& mask);
  Eigen::Index positives() const { return mask.count(); }
};

/// 8-connected components of the true pixels, in order of their first pixel (column-major).
std::vector<std::vector<Eigen::Index>> connected_components(const Mask& mask);

struct SegmentationScore {
  double threshold = 0;  ///< predicted positive iff heatmap >= threshold
  double dice = 0;
  double iou = 0;
};

/// Candidate thresholds, highest first.
std::vector<double> sweep_thresholds(const Matrix& heatmap);

/// Best-DSC threshold over sweep_thresholds; ties keep the highest threshold.
SegmentationScore best_threshold_segmentation(const Matrix& heatmap, const GroundTruthMask& gt);

/// Mean per-region overlap integrated over background FPR in [0, fpr_cap], divided by fpr_cap.
/// The curve starts at (0, 0) and is linearly interpolated at the cap.
double pro_score(const Matrix& heatmap, const GroundTruthMask& gt, double fpr_cap = 0.3);

enum class MaskFill { dataset_mean, black };

struct MaskingOptions {
  MaskFill fill = MaskFill::dataset_mean;
  /// Bootstrap CI per percentage; 0 disables.
  int bootstrap_resamples = 0;
  std::uint64_t seed = 0;
};

/// Scores one batch of images (one score per image).
using ImageClassifier = std::function<Vector(const std::vector<Image>&)>;
using MaskingMetric = std::function<double(const Vector& scores, const metrics::Labels& labels)>;

struct MaskingPoint {
  double percentage = 0;
  double metric = 0;
  double ci_low = 0;
  double ci_high = 0;
  long masked_pixels_per_image = 0;  ///< round(p * H * W) for the first image
};

/// Replaces the round(p * H * W) highest-heatmap pixels of every image (ties by lower index).
Image mask_top_pixels(const Image& image, const Matrix& heatmap, double percentage, const Vector& fill);

/// Per-channel mean over every pixel of every image.
Vector channel_means(const std::vector<Image>& images);

std::vector<MaskingPoint> masking_study(const std::vector<Image>& images, const std::vector<Matrix>& heatmaps,
                                        const std::vector<double>& percentages, const ImageClassifier& classifier,
                                        const metrics::Labels& labels, const MaskingMetric& metric = metrics::auroc,
                                        const MaskingOptions& options = {});

/// Little-endian float32 .npy array.
void write_npy(const Matrix& m, const std::filesystem::path& path);
/// Normalized heatmap in a blue-to-red ramp blended over the image at `alpha`.
Image overlay(const Image& image, const Matrix& heatmap, double alpha = 0.5);

}  // namespace retinavl::localization
