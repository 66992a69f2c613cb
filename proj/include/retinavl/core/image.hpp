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

#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <vector>

namespace retinavl {

/// One image channel, rows = height, cols = width, intensities in [0, 1].
using Plane = Eigen::ArrayXXd;

/// Planar multi-channel image. All planes share one size.
struct Image {
  std::vector<Plane> planes;

  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0)
      : planes(static_cast<std::size_t>(channels), Plane::Constant(height, width, fill)) {}

  int channels() const { return static_cast<int>(planes.size()); }
  int height() const { return planes.empty() ? 0 : static_cast<int>(planes[0].rows()); }
  int width() const { return planes.empty() ? 0 : static_cast<int>(planes[0].cols()); }
  bool empty() const { return planes.empty() || planes[0].size() == 0; }

  Plane& operator[](int c) { return planes[static_cast<std::size_t>(c)]; }
  const Plane& operator[](int c) const { return planes[static_cast<std::size_t>(c)]; }

  /// Per-pixel maximum over channels.
  Plane max_channel() const;

  bool operator==(const Image& other) const;
};

/// Axis-aligned pixel box, half-open: [top, top + height) x [left, left + width).
struct Box {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  bool operator==(const Box&) const = default;
};

Image crop(const Image& img, const Box& box);

/// Centers `img` on a square canvas of side max(h, w), filling with `fill`.
Image pad_to_square(const Image& img, double fill = 0.0);

/// Bilinear resize with half-pixel centers; an equal-size resize is a copy.
Plane resize_bilinear(const Plane& src, int height, int width);
Image resize_bilinear(const Image& img, int height, int width);

Image hflip(const Image& img);

Image read_image(const std::filesystem::path& path);
void write_png(const Image& img, const std::filesystem::path& path);

}  // namespace retinavl
