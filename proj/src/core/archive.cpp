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

#include "retinavl/core/archive.hpp"

#include "retinavl/core/error.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace retinavl {

namespace {

constexpr char kMagic[8] = {'R', 'V', 'L', 'C', 'K', 'P', 'T', '1'};
// Guards against reading absurd sizes from a corrupt file.
constexpr std::uint64_t kMaxBytes = std::uint64_t{1} << 36;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated archive " + path);
  return v;
}

std::string get_string(std::ifstream& in, std::uint64_t n, const std::string& path) {
  if (n > kMaxBytes) throw IoError("corrupt archive " + path);
  std::string s(static_cast<std::size_t>(n), '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw IoError("truncated archive " + path);
  return s;
}

}  // namespace

void write_archive(const std::string& path, const Archive& archive) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::string header = archive.header.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint64_t>(out, archive.params.size());
  for (const auto& [name, m] : archive.params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path);
}

Archive read_archive(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw IoError(path + " is not a parameter archive");
  Archive a;
  const std::string header = get_string(in, get<std::uint64_t>(in, path), path);
  try {
    a.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad archive header in " + path + ": " + e.what());
  }
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = get_string(in, get<std::uint32_t>(in, path), path);
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    if (rows * cols * sizeof(double) > kMaxBytes) throw IoError("corrupt archive " + path);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw IoError("truncated archive " + path);
    a.params.add(name, std::move(m));
  }
  return a;
}

}  // namespace retinavl
