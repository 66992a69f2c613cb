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

#include "retinavl/data/records.hpp"

#include "retinavl/core/error.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace retinavl::data {

using nlohmann::json;

std::string to_string(Eye e) { return e == Eye::OD ? "OD" : "OS"; }

std::string to_string(Laterality l) {
  switch (l) {
    case Laterality::OD: return "OD";
    case Laterality::OS: return "OS";
    case Laterality::BOTH: return "BOTH";
  }
  return "BOTH";
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

std::string to_string(LabelMode m) { return m == LabelMode::single_label ? "single_label" : "multi_label"; }

Eye parse_eye(const std::string& s) {
  if (s == "OD") return Eye::OD;
  if (s == "OS") return Eye::OS;
  throw SchemaError("eye must be OD or OS, got '" + s + "'");
}

Laterality parse_laterality(const std::string& s) {
  if (s == "OD") return Laterality::OD;
  if (s == "OS") return Laterality::OS;
  if (s == "BOTH") return Laterality::BOTH;
  throw SchemaError("laterality must be OD, OS or BOTH, got '" + s + "'");
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw SchemaError("split must be train, val or test, got '" + s + "'");
}

LabelMode parse_label_mode(const std::string& s) {
  if (s == "single_label") return LabelMode::single_label;
  if (s == "multi_label") return LabelMode::multi_label;
  throw SchemaError("label mode must be single_label or multi_label, got '" + s + "'");
}

int LabelSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == name) return static_cast<int>(i);
  return -1;
}

void LabelSchema::validate() const {
  std::set<std::string> seen;
  for (const auto& c : classes) {
    RVL_CHECK(!c.empty(), SchemaError, "empty class name");
    RVL_CHECK(seen.insert(c).second, SchemaError, "duplicate class name '" + c + "'");
  }
  for (const auto& r : trim_rules) {
    RVL_CHECK(!r.sources.empty(), ConfigError, "trim rule without classes");
    for (const auto& s : r.sources)
      RVL_CHECK(index_of(s) >= 0, ConfigError, "trim rule references unknown class '" + s + "'");
    if (r.kind == TrimRule::Kind::merge) RVL_CHECK(!r.target.empty(), ConfigError, "merge rule without a target");
  }
}

bool ClinicalReport::trainable() const { return !findings.empty() && !impression.empty(); }

std::string ClinicalReport::text() const {
  std::string out;
  for (const std::string* part : {&history, &findings, &impression}) {
    if (part->empty()) continue;
    if (!out.empty()) out += ' ';
    out += *part;
  }
  return out;
}

std::filesystem::path DatasetManifest::resolve(const ImageReportPair& r) const {
  const std::filesystem::path p(r.image_path);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest DatasetManifest::subset(Split s) const {
  DatasetManifest out{{}, schema, s, base_dir};
  for (const auto& r : records)
    if (split_of(r) == s) out.records.push_back(r);
  return out;
}

metrics::LabelMatrix DatasetManifest::label_matrix() const {
  metrics::LabelMatrix m = metrics::LabelMatrix::Zero(static_cast<Eigen::Index>(records.size()),
                                                      static_cast<Eigen::Index>(schema.classes.size()));
  for (std::size_t i = 0; i < records.size(); ++i)
    for (const auto& l : records[i].labels) {
      const int c = schema.index_of(l);
      RVL_CHECK(c >= 0, SchemaError, "unknown label '" + l + "' on " + records[i].image_id);
      m(static_cast<Eigen::Index>(i), c) = 1;
    }
  return m;
}

metrics::Labels DatasetManifest::class_indices() const {
  metrics::Labels y(static_cast<Eigen::Index>(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    RVL_CHECK(records[i].labels.size() == 1, SchemaError,
              records[i].image_id + " must carry exactly one label in a single-label task");
    y(static_cast<Eigen::Index>(i)) = schema.index_of(*records[i].labels.begin());
    RVL_CHECK(y(static_cast<Eigen::Index>(i)) >= 0, SchemaError, "unknown label on " + records[i].image_id);
  }
  return y;
}

void DatasetManifest::validate(bool check_files) const {
  schema.validate();
  std::set<std::string> ids;
  for (const auto& r : records) {
    RVL_CHECK(!r.image_id.empty(), SchemaError, "record with empty image_id");
    RVL_CHECK(ids.insert(r.image_id).second, SchemaError, "duplicate image_id '" + r.image_id + "'");
    for (const auto& l : r.labels)
      RVL_CHECK(schema.index_of(l) >= 0, SchemaError, "unknown label '" + l + "' on record '" + r.image_id + "'");
    if (r.age) RVL_CHECK(*r.age >= 0, SchemaError, "negative age on record '" + r.image_id + "'");
    if (check_files)
      RVL_CHECK(std::filesystem::exists(resolve(r)), ValidationError,
                "image file for '" + r.image_id + "' not found: " + resolve(r).string());
  }
}

json to_json(const LabelSchema& schema) {
  json rules = json::array();
  for (const auto& r : schema.trim_rules) {
    if (r.kind == TrimRule::Kind::merge)
      rules.push_back({{"type", "merge"}, {"sources", r.sources}, {"target", r.target}});
    else
      rules.push_back({{"type", "drop"}, {"classes", r.sources}});
  }
  return {{"classes", schema.classes}, {"mode", to_string(schema.mode)}, {"trim_rules", rules}};
}

LabelSchema schema_from_json(const json& j) {
  LabelSchema s;
  s.classes = j.value("classes", std::vector<std::string>{});
  s.mode = parse_label_mode(j.value("mode", std::string("multi_label")));
  for (const auto& r : j.value("trim_rules", json::array())) {
    const std::string type = r.at("type").get<std::string>();
    if (type == "merge")
      s.trim_rules.push_back(TrimRule::merge(r.at("sources").get<std::vector<std::string>>(), r.at("target").get<std::string>()));
    else if (type == "drop")
      s.trim_rules.push_back(TrimRule::drop(r.at("classes").get<std::vector<std::string>>()));
    else
      throw SchemaError("unknown trim rule type '" + type + "'");
  }
  return s;
}

namespace {

ImageReportPair record_from_json(const json& j) {
  ImageReportPair r;
  r.image_id = j.at("image_id").get<std::string>();
  r.image_path = j.at("image_path").get<std::string>();
  r.eye = parse_eye(j.at("eye").get<std::string>());
  const json rep = j.value("report", json::object());
  r.report.history = rep.value("history", "");
  r.report.findings = rep.value("findings", "");
  r.report.impression = rep.value("impression", "");
  r.report.laterality = parse_laterality(rep.value("laterality", std::string("BOTH")));
  if (j.contains("age") && !j["age"].is_null()) r.age = j["age"].get<double>();
  if (j.contains("sex") && !j["sex"].is_null()) {
    const json& s = j["sex"];
    if (s.is_number_integer()) {
      const int v = s.get<int>();
      if (v != 0 && v != 1) throw SchemaError("sex must be 0 (female) or 1 (male)");
      r.sex = static_cast<Sex>(v);
    } else {
      const std::string v = s.get<std::string>();
      if (v == "female") r.sex = Sex::female;
      else if (v == "male") r.sex = Sex::male;
      else throw SchemaError("sex must be female or male, got '" + v + "'");
    }
  }
  if (j.contains("labels") && !j["labels"].is_null())
    for (const auto& l : j["labels"]) r.labels.insert(l.get<std::string>());
  if (j.contains("split") && !j["split"].is_null()) r.split = parse_split(j["split"].get<std::string>());
  return r;
}

json record_to_json(const ImageReportPair& r) {
  json j{{"image_id", r.image_id},
         {"image_path", r.image_path},
         {"eye", to_string(r.eye)},
         {"report",
          {{"history", r.report.history},
           {"findings", r.report.findings},
           {"impression", r.report.impression},
           {"laterality", to_string(r.report.laterality)}}}};
  if (r.age) j["age"] = *r.age;
  if (r.sex) j["sex"] = static_cast<int>(*r.sex);
  if (!r.labels.empty()) j["labels"] = std::vector<std::string>(r.labels.begin(), r.labels.end());
  if (r.split) j["split"] = to_string(*r.split);
  return j;
}

}  // namespace

DatasetManifest parse_manifest_text(const std::string& text, const std::filesystem::path& base_dir,
                                    const ManifestOptions& options) {
  DatasetManifest m;
  m.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(std::string("malformed manifest line: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("manifest line is not an object", line_no);
    try {
      if (!header_seen && j.contains("format")) {
        const std::string fmt = j["format"].get<std::string>();
        if (fmt.rfind("retinavl-manifest/", 0) != 0) throw ParseError("unknown manifest format '" + fmt + "'", line_no);
        m.split = parse_split(j.value("split", std::string("train")));
        m.schema = schema_from_json(j.value("schema", json::object()));
        header_seen = true;
        continue;
      }
      header_seen = true;
      m.records.push_back(record_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(std::string("invalid manifest record: ") + e.what(), line_no);
    } catch (const SchemaError& e) {
      throw SchemaError(std::string(e.what()) + " (line " + std::to_string(line_no) + ")");
    }
  }
  m.validate(options.check_files);
  return m;
}

DatasetManifest parse_manifest(const std::filesystem::path& path, const ManifestOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest_text(buf.str(), path.parent_path(), options);
}

std::string serialize_manifest(const DatasetManifest& manifest) {
  std::string out = json{{"format", "retinavl-manifest/1"},
                         {"split", to_string(manifest.split)},
                         {"schema", to_json(manifest.schema)}}
                        .dump() +
                    "\n";
  for (const auto& r : manifest.records) out += record_to_json(r).dump() + "\n";
  return out;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << serialize_manifest(manifest);
}

}  // namespace retinavl::data
