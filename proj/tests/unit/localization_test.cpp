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
#include "localization_oracles.hpp"

#include "retinavl/core/error.hpp"
#include "retinavl/core/params.hpp"
#include "retinavl/localization/localization.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace retinavl;
using namespace retinavl::localization;

namespace {

Matrix uniform(int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Matrix m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

Mask rect(int h, int w, int r0, int c0, int rh, int cw) {
  Mask m = Mask::Constant(h, w, false);
  m.block(r0, c0, rh, cw) = true;
  return m;
}

}  // namespace

TEST_CASE("similarity heatmap is the per-cell cosine") {
  std::mt19937_64 rng(3);
  const Matrix patches = random_normal(16, 5, 1.0, rng);
  const Vector text = random_normal(5, 1, 1.0, rng).col(0);
  const Matrix grid = similarity_heatmap(patches, text);
  REQUIRE(grid.rows() == 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      const Vector p = patches.row(r * 4 + c).transpose();
      CHECK(std::abs(grid(r, c) - p.dot(text) / (p.norm() * text.norm())) <= 1e-12);
    }
  CHECK((similarity_heatmap(patches, 4.0 * text) - grid).cwiseAbs().maxCoeff() < 1e-14);

  Matrix same = Matrix::Zero(9, 3);
  same.rowwise() = Eigen::RowVector3d(0, 1, 0);
  CHECK(similarity_heatmap(same, Eigen::Vector3d(0, 1, 0)).isApproxToConstant(1.0));
  Matrix peak = Matrix::Zero(9, 3);
  peak.col(0).setOnes();
  peak(4, 0) = 0;
  peak(4, 1) = 1;
  const Matrix g = similarity_heatmap(peak, Eigen::Vector3d(0, 1, 0));
  CHECK(g(1, 1) == 1.0);
  CHECK(g.sum() == 1.0);
  CHECK_THROWS_AS(similarity_heatmap(patches, Eigen::Vector3d(1, 0, 0)), ShapeError);
}

TEST_CASE("bilinear upsampling") {
  Matrix g(2, 2);
  g << 1, 2, 3, 4;
  const Matrix u = upsample_heatmap(g, 4, 4);
  // Half-pixel centers: output 1 maps to source 0.25, output 2 to 0.75.
  CHECK(u(1, 1) == doctest::Approx(0.5625 * 1 + 0.1875 * 2 + 0.1875 * 3 + 0.0625 * 4));
  CHECK(u(2, 1) == doctest::Approx(0.1875 * 1 + 0.0625 * 2 + 0.5625 * 3 + 0.1875 * 4));
  CHECK(u(0, 0) == 1.0);
  CHECK(u.minCoeff() >= 1.0);
  CHECK(u.maxCoeff() <= 4.0);
  CHECK(upsample_heatmap(g, 2, 2) == g);
  CHECK(upsample_heatmap(Matrix::Constant(3, 3, 0.4), 7, 5).isApproxToConstant(0.4));
  CHECK_THROWS_AS(upsample_heatmap(g, 1, 4), ShapeError);
}

TEST_CASE("8-connected components") {
  Mask m = Mask::Constant(5, 5, false);
  m(0, 0) = m(1, 1) = true;  // diagonal neighbours join
  m(3, 3) = m(3, 4) = m(4, 4) = true;
  m(0, 4) = true;
  const auto regions = connected_components(m);
  REQUIRE(regions.size() == 3);
  CHECK(regions[0].size() == 2);
  CHECK(regions[1].size() == 3);
  CHECK(regions[2].size() == 1);
  int n = 0;
  oracle::label_regions(m, &n);
  CHECK(n == 3);
}

TEST_CASE("best-threshold segmentation") {
  const Mask gt = rect(16, 16, 3, 4, 5, 6);
  const auto g = GroundTruthMask::from_mask(gt);
  const auto perfect = best_threshold_segmentation(gt.cast<double>().matrix(), g);
  CHECK(perfect.dice == 1.0);
  CHECK(perfect.iou == 1.0);
  CHECK(pro_score(gt.cast<double>().matrix(), g) == 1.0);

  const auto flat = best_threshold_segmentation(Matrix::Constant(16, 16, 0.3), g);
  CHECK(flat.dice == doctest::Approx(2.0 * 30 / (30 + 256)));

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix h = uniform(16, 16, rng);
    const auto s = best_threshold_segmentation(h, g);
    CHECK(std::abs(s.dice - oracle::best_dice(h, gt)) <= 1e-12);
    CHECK(std::abs(s.dice - 2 * s.iou / (1 + s.iou)) <= 1e-12);
    Mask at = (h.array() >= s.threshold);
    CHECK(std::abs(metrics::dice_iou(at, gt).dice - s.dice) <= 1e-12);
  }
  CHECK_THROWS_AS(best_threshold_segmentation(Matrix::Zero(16, 16), GroundTruthMask::from_mask(Mask::Constant(16, 16, false))),
                  UndefinedMetricError);
}

TEST_CASE("PRO matches the brute-force curve") {
  Mask gt = rect(16, 16, 1, 1, 4, 4) || rect(16, 16, 9, 8, 5, 6);
  const auto g = GroundTruthMask::from_mask(gt);
  REQUIRE(g.regions.size() == 2);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix h = uniform(16, 16, rng);
    h += 0.3 * gt.cast<double>().matrix();
    CHECK(std::abs(pro_score(h, g) - oracle::pro(h, gt, 0.3)) <= 1e-6);
    // Invariance under a strictly increasing transform.
    CHECK(std::abs(pro_score(h, g) - pro_score(Matrix(h.array().exp() * 3 + 1), g)) <= 1e-12);
  }
  const Matrix inverted = 1.0 - gt.cast<double>().matrix().array();
  CHECK(pro_score(inverted, g) == doctest::Approx(oracle::pro(inverted, gt, 0.3)));
  CHECK(pro_score(inverted, g) == 0.0);
  CHECK_THROWS_AS(pro_score(inverted, g, 0.0), ConfigError);
}

TEST_CASE("quantile sweep beyond the exact limit") {
  std::mt19937_64 rng(2);
  const Matrix h = uniform(80, 80, rng);
  const auto t = sweep_thresholds(h);
  CHECK(t.size() == kQuantileThresholds);
  CHECK(t.front() == h.maxCoeff());
  CHECK(t.back() == h.minCoeff());
  CHECK(std::is_sorted(t.rbegin(), t.rend()));
}

TEST_CASE("masking study contracts") {
  std::mt19937_64 rng(4);
  std::vector<Image> images;
  std::vector<Matrix> heat;
  metrics::Labels y(6);
  for (int i = 0; i < 6; ++i) {
    Image img(3, 10, 10, 0.2);
    y(i) = i % 2;
    if (y(i)) img[0].block(2, 2, 3, 3) = 0.9;
    images.push_back(img);
    heat.push_back(uniform(10, 10, rng));
  }
  const auto fill = channel_means(images);
  const Image m = mask_top_pixels(images[1], heat[1], 0.13, fill);
  long changed = 0;
  for (Eigen::Index i = 0; i < 100; ++i) changed += (m[1](i) == fill(1));
  CHECK(changed == 13);
  CHECK(mask_top_pixels(images[1], heat[1], 0.0, fill) == images[1]);
  CHECK_THROWS_AS(mask_top_pixels(images[1], heat[1], 1.5, fill), ConfigError);

  const ImageClassifier brightness = [](const std::vector<Image>& batch) {
    Vector s(static_cast<Eigen::Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) s(static_cast<Eigen::Index>(i)) = batch[i][0].block(2, 2, 3, 3).mean();
    return s;
  };
  const auto points = masking_study(images, heat, {0.0, 0.5}, brightness, y);
  CHECK(points[0].metric == metrics::auroc(brightness(images), y));
  CHECK(points[1].masked_pixels_per_image == 50);
}

TEST_CASE("exports") {
  const auto dir = std::filesystem::temp_directory_path() / "rvl_localization_test";
  std::filesystem::create_directories(dir);
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  write_npy(m, dir / "h.npy");
  CHECK(std::filesystem::file_size(dir / "h.npy") == 128 + 6 * 4);
  std::ifstream in(dir / "h.npy", std::ios::binary);
  in.seekg(128 + 4);
  float second = 0;
  in.read(reinterpret_cast<char*>(&second), 4);
  CHECK(second == 2.0f);
  const Image o = overlay(Image(3, 2, 3, 0.5), m);
  CHECK(o[0](1, 2) == doctest::Approx(0.75));  // hottest pixel is red
  CHECK(o[2](1, 2) == doctest::Approx(0.25));
}
