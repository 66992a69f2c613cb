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

// Binary archive of named matrices with a JSON header.
//
// Layout: the 8-byte magic "RVLCKPT1", a little-endian u64 header length and
// the header text, a u64 entry count, then per entry a u32 name length, the
// name, u64 rows, u64 cols and rows*cols column-major float64 values.

#pragma once

#include "retinavl/core/params.hpp"

#include "json.hpp"

#include <string>

namespace retinavl {

struct Archive {
  nlohmann::json header = nlohmann::json::object();
  ParameterSet params;
};

void write_archive(const std::string& path, const Archive& archive);
Archive read_archive(const std::string& path);

}  // namespace retinavl
