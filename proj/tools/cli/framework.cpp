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

#include "cli/framework.hpp"

#include "retinavl/core/error.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace retinavl::cli {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::vector<std::string> split_list(const std::string& raw) {
  std::vector<std::string> out;
  if (raw.empty()) return out;
  std::stringstream in(raw);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

long to_integer(const std::string& name, const std::string& raw) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  RVL_CHECK(used == raw.size() && !raw.empty(), ConfigError, name + ": expected an integer, got '" + raw + "'");
  return v;
}

double to_number(const std::string& name, const std::string& raw) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(raw, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  RVL_CHECK(used == raw.size() && !raw.empty(), ConfigError, name + ": expected a number, got '" + raw + "'");
  return v;
}

bool to_flag(const std::string& name, const std::string& raw) {
  if (raw.empty() || raw == "true" || raw == "1" || raw == "yes") return true;
  if (raw == "false" || raw == "0" || raw == "no") return false;
  throw ConfigError(name + ": expected true or false, got '" + raw + "'");
}

}  // namespace

ordered_json parse_value(const Param& p, const std::string& raw) {
  switch (p.kind) {
    case Kind::text:
    case Kind::path: return raw;
    case Kind::integer: return to_integer(p.name, raw);
    case Kind::number: return to_number(p.name, raw);
    case Kind::flag: return to_flag(p.name, raw);
    case Kind::numbers: {
      ordered_json a = ordered_json::array();
      for (const auto& s : split_list(raw)) a.push_back(to_number(p.name, s));
      return a;
    }
    case Kind::integers: {
      ordered_json a = ordered_json::array();
      for (const auto& s : split_list(raw)) a.push_back(to_integer(p.name, s));
      return a;
    }
    case Kind::texts: {
      ordered_json a = ordered_json::array();
      for (const auto& s : split_list(raw)) a.push_back(s);
      return a;
    }
  }
  return raw;
}

ordered_json coerce_value(const Param& p, const json& v) {
  auto fail = [&p]() -> ordered_json { throw ConfigError("config key '" + p.name + "' has the wrong type"); };
  switch (p.kind) {
    case Kind::text:
    case Kind::path: return v.is_string() ? ordered_json(v.get<std::string>()) : fail();
    case Kind::integer: return v.is_number_integer() ? ordered_json(v.get<long>()) : fail();
    case Kind::number: return v.is_number() ? ordered_json(v.get<double>()) : fail();
    case Kind::flag: return v.is_boolean() ? ordered_json(v.get<bool>()) : fail();
    case Kind::numbers:
    case Kind::integers:
    case Kind::texts: {
      if (v.is_string()) return parse_value(p, v.get<std::string>());
      if (!v.is_array()) return fail();
      ordered_json a = ordered_json::array();
      for (const auto& e : v) {
        if (p.kind == Kind::texts && !e.is_string()) return fail();
        if (p.kind == Kind::numbers && !e.is_number()) return fail();
        if (p.kind == Kind::integers && !e.is_number_integer()) return fail();
        a.push_back(ordered_json::parse(e.dump()));
      }
      return a;
    }
  }
  return fail();
}

RunContext::RunContext(std::string command, ordered_json config, std::ostream& log)
    : command_(std::move(command)), config_(std::move(config)), log_(log) {
  out_ = path("out");
}

const ordered_json& RunContext::at(const std::string& name) const {
  auto it = config_.find(name);
  RVL_CHECK(it != config_.end(), ConfigError, "no setting named " + name);
  return *it;
}

std::string RunContext::text(const std::string& name) const { return at(name).get<std::string>(); }
std::filesystem::path RunContext::path(const std::string& name) const { return at(name).get<std::string>(); }
long RunContext::integer(const std::string& name) const { return at(name).get<long>(); }
double RunContext::number(const std::string& name) const { return at(name).get<double>(); }
bool RunContext::flag(const std::string& name) const { return at(name).get<bool>(); }
std::vector<double> RunContext::numbers(const std::string& name) const { return at(name).get<std::vector<double>>(); }
std::vector<long> RunContext::integers(const std::string& name) const { return at(name).get<std::vector<long>>(); }
std::vector<std::string> RunContext::texts(const std::string& name) const {
  return at(name).get<std::vector<std::string>>();
}
bool RunContext::has(const std::string& name) const {
  const auto& v = at(name);
  return v.is_string() && !v.get<std::string>().empty();
}

std::filesystem::path RunContext::output(const std::filesystem::path& relative) const {
  const auto p = out_ / relative;
  std::filesystem::create_directories(p.parent_path());
  return p;
}

Table::Table(std::vector<std::string> header) : header_(std::move(header)) {}

void Table::add(std::vector<std::string> cells) {
  RVL_CHECK(cells.size() == header_.size(), ShapeError, "table row width differs from the header");
  for (auto& c : cells)
    for (char& ch : c)
      if (ch == '\t' || ch == '\n') ch = ' ';
  rows_.push_back(std::move(cells));
}

std::string Table::str() const {
  std::string out;
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "\t" : "") + cells[i];
    out += "\n";
  };
  line(header_);
  for (const auto& r : rows_) line(r);
  return out;
}

void Table::write(const std::filesystem::path& path) const { write_text(path, str()); }

std::string fmt(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", value);
  return buf;
}

Table stat_table(const std::vector<metrics::StatReport>& reports) {
  Table t({"metric", "point", "ci_low", "ci_high", "n", "n_resamples", "seed", "p_value", "comparator"});
  for (const auto& r : reports)
    t.add({r.metric, fmt(r.point), fmt(r.ci_low), fmt(r.ci_high), std::to_string(r.n), std::to_string(r.n_resamples),
           std::to_string(r.seed), r.p_value ? fmt(*r.p_value) : "", r.comparator});
  return t;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace retinavl::cli
