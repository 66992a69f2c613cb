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

#include "retinavl/core/types.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>

namespace retinavl {

/// Named dense parameters, iterated in name order.
class ParameterSet {
 public:
  using Map = std::map<std::string, Matrix>;

  Matrix& add(const std::string& name, Matrix init);
  Matrix& operator[](const std::string& name);
  const Matrix& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return values_.count(name) != 0; }

  std::size_t size() const { return values_.size(); }
  std::size_t scalar_count() const;
  Map::iterator begin() { return values_.begin(); }
  Map::iterator end() { return values_.end(); }
  Map::const_iterator begin() const { return values_.begin(); }
  Map::const_iterator end() const { return values_.end(); }

  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  bool same_layout(const ParameterSet& other) const;

  /// FNV-1a over names, shapes and raw bytes; any bit change alters it.
  std::uint64_t checksum() const;

  /// Copies every entry of `other` under `prefix + name`.
  void merge(const ParameterSet& other, const std::string& prefix = "");
  /// Entries whose names start with `prefix`, with the prefix stripped.
  ParameterSet extract(const std::string& prefix) const;

  bool operator==(const ParameterSet& other) const;

 private:
  Map values_;
};

/// N(0, std^2) entries from a seeded stream.
Matrix random_normal(Eigen::Index rows, Eigen::Index cols, double std, std::mt19937_64& rng);

}  // namespace retinavl
