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

// Brute-force references for the threshold-swept localization scores. Every
// threshold recomputes its masks from scratch; nothing is shared with the
// incremental library code.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <set>
#include <vector>

namespace oracle {

using Map = Eigen::MatrixXd;
using BoolMap = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Union-find labelling with 8-neighbours; returns a region id per pixel (-1 off-mask).
inline Eigen::MatrixXi label_regions(const BoolMap& m, int* count) {
  const int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
  std::vector<int> parent(static_cast<std::size_t>(h * w));
  for (int i = 0; i < h * w; ++i) parent[static_cast<std::size_t>(i)] = i;
  auto find = [&parent](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
    return x;
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!m(r, c)) continue;
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w || !m(rr, cc)) continue;
          parent[static_cast<std::size_t>(find(r * w + c))] = find(rr * w + cc);
        }
    }
  Eigen::MatrixXi out = Eigen::MatrixXi::Constant(h, w, -1);
  std::vector<int> id(static_cast<std::size_t>(h * w), -1);
  int n = 0;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!m(r, c)) continue;
      int& slot = id[static_cast<std::size_t>(find(r * w + c))];
      if (slot < 0) slot = n++;
      out(r, c) = slot;
    }
  *count = n;
  return out;
}

inline std::vector<double> distinct_desc(const Map& h) {
  std::set<double> s(h.data(), h.data() + h.size());
  return {s.rbegin(), s.rend()};
}

// Maximum DSC over every distinct value used as a ">=" threshold.
inline double best_dice(const Map& heat, const BoolMap& gt) {
  double best = 0;
  for (double t : distinct_desc(heat)) {
    double inter = 0, pred = 0, pos = 0;
    for (Eigen::Index i = 0; i < heat.size(); ++i) {
      const bool p = heat(i) >= t;
      pred += p;
      pos += gt(i);
      inter += p && gt(i);
    }
    best = std::max(best, 2 * inter / (pred + pos));
  }
  return best;
}

// PRO: the (FPR, mean region overlap) curve from every distinct threshold,
// starting at the origin, integrated by trapezoids up to the cap.
inline double pro(const Map& heat, const BoolMap& gt, double cap) {
  int n_regions = 0;
  const Eigen::MatrixXi region = label_regions(gt, &n_regions);
  std::vector<double> region_size(static_cast<std::size_t>(n_regions), 0.0);
  for (Eigen::Index i = 0; i < region.size(); ++i)
    if (region(i) >= 0) region_size[static_cast<std::size_t>(region(i))] += 1;
  const double negatives = static_cast<double>(gt.size() - gt.count());

  std::vector<std::pair<double, double>> curve = {{0.0, 0.0}};
  for (double t : distinct_desc(heat)) {
    std::vector<double> hit(static_cast<std::size_t>(n_regions), 0.0);
    double fp = 0;
    for (Eigen::Index i = 0; i < heat.size(); ++i) {
      if (heat(i) < t) continue;
      if (region(i) >= 0) hit[static_cast<std::size_t>(region(i))] += 1;
      else fp += 1;
    }
    double overlap = 0;
    for (int r = 0; r < n_regions; ++r)
      overlap += hit[static_cast<std::size_t>(r)] / region_size[static_cast<std::size_t>(r)];
    curve.emplace_back(fp / negatives, overlap / n_regions);
  }
  double area = 0;
  for (std::size_t k = 1; k < curve.size(); ++k) {
    const auto [x0, y0] = curve[k - 1];
    auto [x1, y1] = curve[k];
    if (x0 >= cap) break;
    if (x1 > cap) {
      y1 = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
      x1 = cap;
    }
    area += 0.5 * (y0 + y1) * (x1 - x0);
  }
  return area / cap;
}

}  // namespace oracle
