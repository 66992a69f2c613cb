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

#include "retinavl/data/preprocess.hpp"

#include "retinavl/core/error.hpp"

#include <algorithm>
#include <cmath>

namespace retinavl::data {

Modality parse_modality(const std::string& s) {
  if (s == "CFP" || s == "cfp") return Modality::CFP;
  if (s == "FFA" || s == "ffa") return Modality::FFA;
  if (s == "UWF" || s == "uwf") return Modality::UWF;
  throw ConfigError("modality must be CFP, FFA or UWF, got '" + s + "'");
}

std::optional<Box> foreground_box(const Image& image, double threshold) {
  if (image.empty()) return std::nullopt;
  const Plane m = image.max_channel();
  int top = m.rows(), bottom = -1, left = m.cols(), right = -1;
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x)
      if (m(y, x) > threshold) {
        top = std::min<int>(top, y);
        bottom = std::max<int>(bottom, y);
        left = std::min<int>(left, x);
        right = std::max<int>(right, x);
      }
  if (bottom < 0) return std::nullopt;
  return Box{top, left, bottom - top + 1, right - left + 1};
}

Image preprocess_image(const Image& image, Modality modality, int target_side, const PreprocessOptions& options) {
  RVL_CHECK(!image.empty(), ValidationError, "preprocess_image: empty image");
  RVL_CHECK(target_side > 0, ConfigError, "preprocess_image: target_side must be positive");
  const std::optional<Box> fg = foreground_box(image, options.threshold);
  RVL_CHECK(fg.has_value(), UnusableRecordError, "preprocess_image: no pixel above the background threshold");
  Image work;
  switch (modality) {
    case Modality::CFP: {
      std::optional<Box> box = options.crop_provider ? options.crop_provider(image) : std::nullopt;
      work = crop(image, box.value_or(*fg));
      break;
    }
    case Modality::FFA:
      work = crop(image, *fg);
      break;
    case Modality::UWF:
      work = image;
      break;
  }
  return resize_bilinear(pad_to_square(work), target_side, target_side);
}

void AugmentationPolicy::validate() const {
  auto unit = [](double v) { return v >= 0 && v <= 1; };
  RVL_CHECK(crop_scale.first > 0 && crop_scale.first <= crop_scale.second && crop_scale.second <= 1, ConfigError,
            "crop_scale must satisfy 0 < lo <= hi <= 1");
  RVL_CHECK(unit(brightness) && unit(contrast) && unit(saturation), ConfigError, "jitter strengths must lie in [0, 1]");
  RVL_CHECK(unit(hflip_prob), ConfigError, "hflip_prob must lie in [0, 1]");
  RVL_CHECK(cutout_fraction >= 0 && cutout_fraction < 1, ConfigError, "cutout_fraction must lie in [0, 1)");
  RVL_CHECK(mixup_alpha >= 0, ConfigError, "mixup_alpha must be >= 0");
}

AugmentationPolicy AugmentationPolicy::standard(std::uint64_t seed) {
  AugmentationPolicy p;
  p.crop_scale = {0.8, 1.0};
  p.brightness = 0.2;
  p.contrast = 0.2;
  p.saturation = 0.2;
  p.hflip_prob = 0.5;
  p.cutout_fraction = 0.05;
  p.rng_seed = seed;
  return p;
}

std::pair<int, int> cutout_extent(int height, int width, double fraction) {
  const double s = std::sqrt(fraction);
  return {static_cast<int>(std::lround(s * height)), static_cast<int>(std::lround(s * width))};
}

Image augment(const Image& image, const AugmentationPolicy& policy, std::mt19937_64& rng) {
  policy.validate();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Image out = image;
  const int h = image.height(), w = image.width();

  if (policy.crop_scale.first < 1.0) {
    const double area = policy.crop_scale.first + (policy.crop_scale.second - policy.crop_scale.first) * u01(rng);
    const int ch = std::clamp(static_cast<int>(std::lround(std::sqrt(area) * h)), 1, h);
    const int cw = std::clamp(static_cast<int>(std::lround(std::sqrt(area) * w)), 1, w);
    const int top = std::uniform_int_distribution<int>(0, h - ch)(rng);
    const int left = std::uniform_int_distribution<int>(0, w - cw)(rng);
    out = resize_bilinear(crop(out, {top, left, ch, cw}), h, w);
  }
  if (policy.hflip_prob > 0 && u01(rng) < policy.hflip_prob) out = hflip(out);

  auto factor = [&](double strength) { return 1.0 + strength * (2.0 * u01(rng) - 1.0); };
  if (policy.brightness > 0) {
    const double f = factor(policy.brightness);
    for (auto& p : out.planes) p *= f;
  }
  if (policy.contrast > 0) {
    const double f = factor(policy.contrast);
    double mean = 0;
    for (const auto& p : out.planes) mean += p.mean();
    mean /= out.channels();
    for (auto& p : out.planes) p = mean + f * (p - mean);
  }
  if (policy.saturation > 0 && out.channels() == 3) {
    const double f = factor(policy.saturation);
    const Plane gray = 0.299 * out[0] + 0.587 * out[1] + 0.114 * out[2];
    for (auto& p : out.planes) p = gray + f * (p - gray);
  }
  if (policy.brightness > 0 || policy.contrast > 0 || policy.saturation > 0)
    for (auto& p : out.planes) p = p.max(0.0).min(1.0);

  if (policy.cutout_fraction > 0) {
    const auto [eh, ew] = cutout_extent(h, w, policy.cutout_fraction);
    if (eh > 0 && ew > 0) {
      const int top = std::uniform_int_distribution<int>(0, h - eh)(rng);
      const int left = std::uniform_int_distribution<int>(0, w - ew)(rng);
      for (auto& p : out.planes) p.block(top, left, eh, ew).setZero();
    }
  }
  return out;
}

}  // namespace retinavl::data
