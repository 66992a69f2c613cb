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

#include "retinavl/localization/localization.hpp"

#include "retinavl/core/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

namespace retinavl::localization {

Matrix Heatmap::normalized() const {
  if (max - min <= 0) return Matrix::Zero(upsampled.rows(), upsampled.cols());
  return (upsampled.array() - min) / (max - min);
}

Matrix similarity_heatmap(const Matrix& patch_grid, const Vector& text_embedding) {
  RVL_CHECK(patch_grid.cols() == text_embedding.size(), ShapeError,
            "similarity_heatmap: patch width " + std::to_string(patch_grid.cols()) + " vs text width " +
                std::to_string(text_embedding.size()));
  const auto side = static_cast<Eigen::Index>(std::lround(std::sqrt(static_cast<double>(patch_grid.rows()))));
  RVL_CHECK(side * side == patch_grid.rows() && side > 0, ShapeError, "similarity_heatmap: patch count is not a square");
  const double tn = text_embedding.norm();
  RVL_CHECK(tn > 0, NumericError, "similarity_heatmap: zero text embedding");
  const Vector norms = patch_grid.rowwise().norm();
  RVL_CHECK((norms.array() > 0).all(), NumericError, "similarity_heatmap: zero patch feature");
  const Vector cos = (patch_grid * text_embedding).cwiseQuotient(norms) / tn;
  Matrix grid(side, side);
  for (Eigen::Index r = 0; r < side; ++r)
    for (Eigen::Index c = 0; c < side; ++c) grid(r, c) = std::clamp(cos(r * side + c), -1.0, 1.0);
  return grid;
}

Matrix upsample_heatmap(const Matrix& grid, int height, int width) {
  RVL_CHECK(height >= grid.rows() && width >= grid.cols(), ShapeError, "upsample_heatmap: target smaller than grid");
  return resize_bilinear(Plane(grid.array()), height, width).matrix();
}

Heatmap localize(const encoders::Model& model, const Image& image, const std::string& prompt) {
  const auto enc = encoders::encode_image(model, image);
  const Vector text = encoders::encode_text(model, prompt);
  Heatmap h;
  h.grid = similarity_heatmap(enc.patch_grid, text);
  h.upsampled = upsample_heatmap(h.grid, image.height(), image.width());
  h.min = h.upsampled.minCoeff();
  h.max = h.upsampled.maxCoeff();
  return h;
}

std::vector<std::vector<Eigen::Index>> connected_components(const Mask& mask) {
  const Eigen::Index h = mask.rows(), w = mask.cols();
  std::vector<int> label(static_cast<std::size_t>(mask.size()), -1);
  std::vector<std::vector<Eigen::Index>> regions;
  std::vector<Eigen::Index> stack;
  for (Eigen::Index start = 0; start < mask.size(); ++start) {
    if (!mask(start) || label[static_cast<std::size_t>(start)] >= 0) continue;
    const int id = static_cast<int>(regions.size());
    regions.emplace_back();
    stack.assign(1, start);
    label[static_cast<std::size_t>(start)] = id;
    while (!stack.empty()) {
      const Eigen::Index p = stack.back();
      stack.pop_back();
      regions.back().push_back(p);
      const Eigen::Index r = p % h, c = p / h;
      for (Eigen::Index dc = -1; dc <= 1; ++dc)
        for (Eigen::Index dr = -1; dr <= 1; ++dr) {
          const Eigen::Index rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const Eigen::Index q = cc * h + rr;
          if (mask(q) && label[static_cast<std::size_t>(q)] < 0) {
            label[static_cast<std::size_t>(q)] = id;
            stack.push_back(q);
          }
        }
    }
    std::sort(regions.back().begin(), regions.back().end());
  }
  return regions;
}

GroundTruthMask GroundTruthMask::from_mask(const Mask& mask) {
  return {mask, connected_components(mask)};
}

std::vector<double> sweep_thresholds(const Matrix& heatmap) {
  std::vector<double> v(heatmap.data(), heatmap.data() + heatmap.size());
  RVL_CHECK(std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }), NumericError,
            "heatmap has non-finite values");
  std::sort(v.begin(), v.end());
  std::vector<double> distinct = v;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> out;
  if (distinct.size() <= kExactSweepLimit) {
    out.assign(distinct.rbegin(), distinct.rend());
    return out;
  }
  for (std::size_t k = 0; k < kQuantileThresholds; ++k)
    out.push_back(metrics::sorted_quantile(v, static_cast<double>(k) / static_cast<double>(kQuantileThresholds - 1)));
  std::sort(out.rbegin(), out.rend());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

void check_pair(const Matrix& heatmap, const GroundTruthMask& gt) {
  RVL_CHECK(heatmap.rows() == gt.mask.rows() && heatmap.cols() == gt.mask.cols(), ShapeError,
            "heatmap and mask differ in size");
  RVL_CHECK(gt.positives() > 0, UndefinedMetricError, "ground truth mask is empty");
}

// Pixel indices ordered by decreasing heatmap value (stable).
std::vector<Eigen::Index> descending_order(const Matrix& heatmap) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(heatmap.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&heatmap](Eigen::Index a, Eigen::Index b) { return heatmap(a) > heatmap(b); });
  return order;
}

}  // namespace

SegmentationScore best_threshold_segmentation(const Matrix& heatmap, const GroundTruthMask& gt) {
  check_pair(heatmap, gt);
  const auto order = descending_order(heatmap);
  const double positives = static_cast<double>(gt.positives());
  SegmentationScore best{std::numeric_limits<double>::infinity(), 0.0, 0.0};
  std::size_t k = 0;
  double tp = 0, predicted = 0;
  for (double t : sweep_thresholds(heatmap)) {
    for (; k < order.size() && heatmap(order[k]) >= t; ++k) {
      predicted += 1;
      tp += gt.mask(order[k]) ? 1 : 0;
    }
    const double dice = 2 * tp / (predicted + positives);
    if (dice > best.dice) best = {t, dice, tp / (predicted + positives - tp)};
  }
  if (!std::isfinite(best.threshold)) best.threshold = heatmap.maxCoeff();  // nothing overlaps
  return best;
}

double pro_score(const Matrix& heatmap, const GroundTruthMask& gt, double fpr_cap) {
  RVL_CHECK(fpr_cap > 0 && fpr_cap <= 1, ConfigError, "pro_score: fpr_cap must lie in (0, 1]");
  check_pair(heatmap, gt);
  const double negatives = static_cast<double>(heatmap.size() - gt.positives());
  RVL_CHECK(negatives > 0, UndefinedMetricError, "pro_score: mask has no background");
  std::vector<int> region_of(static_cast<std::size_t>(heatmap.size()), -1);
  for (std::size_t r = 0; r < gt.regions.size(); ++r)
    for (Eigen::Index p : gt.regions[r]) region_of[static_cast<std::size_t>(p)] = static_cast<int>(r);
  const double n_regions = static_cast<double>(gt.regions.size());

  const auto order = descending_order(heatmap);
  std::size_t k = 0;
  double fp = 0;
  std::vector<double> hits(gt.regions.size(), 0.0);
  double prev_fpr = 0, prev_pro = 0, area = 0;
  for (double t : sweep_thresholds(heatmap)) {
    for (; k < order.size() && heatmap(order[k]) >= t; ++k) {
      const int r = region_of[static_cast<std::size_t>(order[k])];
      if (r < 0) fp += 1;
      else hits[static_cast<std::size_t>(r)] += 1;
    }
    double overlap = 0;
    for (std::size_t r = 0; r < hits.size(); ++r) overlap += hits[r] / static_cast<double>(gt.regions[r].size());
    const double fpr = fp / negatives, pro = overlap / n_regions;
    if (fpr >= fpr_cap) {
      const double at_cap = fpr == prev_fpr ? pro : prev_pro + (pro - prev_pro) * (fpr_cap - prev_fpr) / (fpr - prev_fpr);
      area += 0.5 * (prev_pro + at_cap) * (fpr_cap - prev_fpr);
      return area / fpr_cap;
    }
    area += 0.5 * (prev_pro + pro) * (fpr - prev_fpr);
    prev_fpr = fpr;
    prev_pro = pro;
  }
  return area / fpr_cap;  // unreachable: the lowest threshold reaches FPR 1
}

Vector channel_means(const std::vector<Image>& images) {
  RVL_CHECK(!images.empty(), ValidationError, "channel_means: no images");
  Vector sum = Vector::Zero(images.front().channels());
  double count = 0;
  for (const auto& img : images) {
    RVL_CHECK(img.channels() == sum.size(), ShapeError, "channel_means: channel counts differ");
    for (int c = 0; c < img.channels(); ++c) sum(c) += img[c].sum();
    count += static_cast<double>(img.height()) * img.width();
  }
  return sum / count;
}

Image mask_top_pixels(const Image& image, const Matrix& heatmap, double percentage, const Vector& fill) {
  RVL_CHECK(percentage >= 0 && percentage <= 1, ConfigError, "masking percentage outside [0, 1]");
  RVL_CHECK(heatmap.rows() == image.height() && heatmap.cols() == image.width(), ShapeError,
            "heatmap and image differ in size");
  RVL_CHECK(fill.size() == image.channels(), ShapeError, "fill value per channel required");
  const auto n = static_cast<std::size_t>(std::llround(percentage * static_cast<double>(heatmap.size())));
  Image out = image;
  if (n == 0) return out;
  const auto order = descending_order(heatmap);
  for (std::size_t k = 0; k < n; ++k)
    for (int c = 0; c < out.channels(); ++c) out[c](order[k]) = fill(c);
  return out;
}

std::vector<MaskingPoint> masking_study(const std::vector<Image>& images, const std::vector<Matrix>& heatmaps,
                                        const std::vector<double>& percentages, const ImageClassifier& classifier,
                                        const metrics::Labels& labels, const MaskingMetric& metric,
                                        const MaskingOptions& options) {
  RVL_CHECK(images.size() == heatmaps.size(), ShapeError, "masking_study: one heatmap per image required");
  RVL_CHECK(static_cast<Eigen::Index>(images.size()) == labels.size(), ShapeError, "masking_study: one label per image");
  for (double p : percentages) RVL_CHECK(p >= 0 && p <= 1, ConfigError, "masking percentage outside [0, 1]");
  const Vector fill = options.fill == MaskFill::black ? Vector::Zero(images.front().channels()) : channel_means(images);

  std::vector<MaskingPoint> out;
  for (double p : percentages) {
    std::vector<Image> masked;
    masked.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) masked.push_back(mask_top_pixels(images[i], heatmaps[i], p, fill));
    const Vector scores = classifier(masked);
    RVL_CHECK(scores.size() == labels.size(), ShapeError, "classifier returned the wrong number of scores");
    MaskingPoint point;
    point.percentage = p;
    point.metric = metric(scores, labels);
    point.ci_low = point.ci_high = point.metric;
    point.masked_pixels_per_image =
        std::lround(p * static_cast<double>(images.front().height()) * images.front().width());
    if (options.bootstrap_resamples > 0) {
      metrics::BootstrapOptions b;
      b.n_resamples = options.bootstrap_resamples;
      b.seed = options.seed;
      const auto report = metrics::bootstrap_ci(
          [&metric](const metrics::ScoreSet& s) { return metric(s.scores.col(0), s.labels.col(0)); },
          metrics::ScoreSet::binary(scores, labels), b);
      point.ci_low = report.ci_low;
      point.ci_high = report.ci_high;
    }
    out.push_back(point);
  }
  return out;
}

void write_npy(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(m.rows()) + ", " +
                       std::to_string(m.cols()) + "), }";
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write("\x93NUMPY\x01\x00", 8);
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out << header;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float v = static_cast<float>(m(r, c));
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

Image overlay(const Image& image, const Matrix& heatmap, double alpha) {
  RVL_CHECK(heatmap.rows() == image.height() && heatmap.cols() == image.width(), ShapeError,
            "overlay: heatmap and image differ in size");
  const double lo = heatmap.minCoeff(), hi = heatmap.maxCoeff();
  const Plane t = hi > lo ? Plane((heatmap.array() - lo) / (hi - lo)) : Plane::Zero(heatmap.rows(), heatmap.cols());
  // Blue (0) through green (0.5) to red (1).
  const Plane ramp[3] = {(2 * t - 1).max(0.0), 1 - (2 * t - 1).abs(), (1 - 2 * t).max(0.0)};
  Image out(3, image.height(), image.width());
  for (int c = 0; c < 3; ++c) {
    const Plane& base = image.channels() == 3 ? image[c] : image[0];
    out[c] = (1 - alpha) * base + alpha * ramp[c];
  }
  return out;
}

}  // namespace retinavl::localization
