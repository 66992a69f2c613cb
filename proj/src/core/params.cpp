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

#include "retinavl/core/params.hpp"

#include "retinavl/core/error.hpp"

#include <cstring>

namespace retinavl {

Matrix& ParameterSet::add(const std::string& name, Matrix init) {
  auto [it, inserted] = values_.emplace(name, std::move(init));
  RVL_CHECK(inserted, ConfigError, "duplicate parameter " + name);
  return it->second;
}

Matrix& ParameterSet::operator[](const std::string& name) {
  auto it = values_.find(name);
  RVL_CHECK(it != values_.end(), ConfigError, "unknown parameter " + name);
  return it->second;
}

const Matrix& ParameterSet::operator[](const std::string& name) const {
  auto it = values_.find(name);
  RVL_CHECK(it != values_.end(), ConfigError, "unknown parameter " + name);
  return it->second;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : values_) n += static_cast<std::size_t>(m.size());
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& [name, m] : values_) out.values_.emplace(name, Matrix::Zero(m.rows(), m.cols()));
  return out;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (values_.size() != other.values_.size()) return false;
  auto a = values_.begin();
  auto b = other.values_.begin();
  for (; a != values_.end(); ++a, ++b)
    if (a->first != b->first || a->second.rows() != b->second.rows() || a->second.cols() != b->second.cols())
      return false;
  return true;
}

std::uint64_t ParameterSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, m] : values_) {
    feed(name.data(), name.size());
    const Eigen::Index shape[2] = {m.rows(), m.cols()};
    feed(shape, sizeof(shape));
    feed(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  return h;
}

void ParameterSet::merge(const ParameterSet& other, const std::string& prefix) {
  for (const auto& [name, m] : other.values_) add(prefix + name, m);
}

ParameterSet ParameterSet::extract(const std::string& prefix) const {
  ParameterSet out;
  for (const auto& [name, m] : values_)
    if (name.compare(0, prefix.size(), prefix) == 0) out.values_.emplace(name.substr(prefix.size()), m);
  return out;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (!same_layout(other)) return false;
  auto b = other.values_.begin();
  for (auto a = values_.begin(); a != values_.end(); ++a, ++b)
    if (a->second != b->second) return false;
  return true;
}

Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, std);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

}  // namespace retinavl
