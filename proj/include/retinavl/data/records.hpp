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

// Dataset records and the line-delimited manifest format.
//
// A manifest file is JSON Lines. The first non-empty line is a header object
// {"format": "retinavl-manifest/1", "split": ..., "schema": {...}}; every
// further line is one image-report pair. Relative image paths resolve against
// the manifest's directory.

#pragma once

#include "retinavl/metrics/metrics.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace retinavl::data {

enum class Eye { OD, OS };
enum class Laterality { OD, OS, BOTH };
enum class Sex { female = 0, male = 1 };
enum class Split { train, val, test };
enum class LabelMode { single_label, multi_label };

std::string to_string(Eye e);
std::string to_string(Laterality l);
std::string to_string(Split s);
std::string to_string(LabelMode m);
Eye parse_eye(const std::string& s);
Laterality parse_laterality(const std::string& s);
Split parse_split(const std::string& s);
LabelMode parse_label_mode(const std::string& s);

/// Relabels `sources` as `target` (merge) or removes `sources` from evaluation (drop).
struct TrimRule {
  enum class Kind { merge, drop };
  Kind kind = Kind::merge;
  std::vector<std::string> sources;
  std::string target;  ///< merge only

  static TrimRule merge(std::vector<std::string> sources, std::string target) {
    return {Kind::merge, std::move(sources), std::move(target)};
  }
  static TrimRule drop(std::vector<std::string> classes) { return {Kind::drop, std::move(classes), {}}; }
};

struct LabelSchema {
  std::vector<std::string> classes;
  LabelMode mode = LabelMode::multi_label;
  std::vector<TrimRule> trim_rules;

  /// Unique class names; rule sources exist; a merge target is either an existing class or new.
  void validate() const;
  /// Index of a class, or -1.
  int index_of(const std::string& name) const;
};

struct ClinicalReport {
  std::string history;
  std::string findings;
  std::string impression;
  Laterality laterality = Laterality::BOTH;

  /// Findings and impression are both non-empty.
  bool trainable() const;
  /// Text fed to the text encoder: findings then impression, with history first when present.
  std::string text() const;
  bool operator==(const ClinicalReport&) const = default;
};

struct ImageReportPair {
  std::string image_id;
  std::string image_path;
  Eye eye = Eye::OD;
  ClinicalReport report;
  std::optional<double> age;
  std::optional<Sex> sex;
  std::set<std::string> labels;
  /// Overrides the manifest split when present.
  std::optional<Split> split;

  bool operator==(const ImageReportPair&) const = default;
};

struct DatasetManifest {
  std::vector<ImageReportPair> records;
  LabelSchema schema;
  Split split = Split::train;
  std::filesystem::path base_dir;

  Split split_of(const ImageReportPair& r) const { return r.split.value_or(split); }
  std::filesystem::path resolve(const ImageReportPair& r) const;
  /// Records of one split, in file order.
  DatasetManifest subset(Split s) const;
  /// N x C 0/1 indicators in schema class order.
  metrics::LabelMatrix label_matrix() const;
  /// Single-label class index per record; throws if a record does not carry exactly one label.
  metrics::Labels class_indices() const;

  /// Unique ids and known labels; files must exist when check_files is set.
  void validate(bool check_files) const;
};

struct ManifestOptions {
  bool check_files = true;
};

DatasetManifest parse_manifest(const std::filesystem::path& path, const ManifestOptions& options = {});
/// Parses manifest text; `base_dir` anchors relative paths.
DatasetManifest parse_manifest_text(const std::string& text, const std::filesystem::path& base_dir,
                                    const ManifestOptions& options = {});
std::string serialize_manifest(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

nlohmann::json to_json(const LabelSchema& schema);
LabelSchema schema_from_json(const nlohmann::json& j);

}  // namespace retinavl::data
