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

// Command plumbing shared by every subcommand: typed parameters resolved from
// defaults, an optional JSON config file and command-line flags (in that
// order of precedence), a resolved-config snapshot and delimited tables.

#pragma once

#include "retinavl/metrics/stats.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

namespace retinavl::cli {

enum class Kind { text, path, integer, number, flag, numbers, integers, texts };

/// A setting accepted both as `--name value` and as key `name` in the config file.
struct Param {
  std::string name;
  Kind kind = Kind::text;
  nlohmann::json fallback;  ///< null marks the parameter as required
  std::string help;
};

/// Resolved settings of one invocation.
class RunContext {
 public:
  RunContext(std::string command, nlohmann::ordered_json config, std::ostream& log);

  const std::string& command() const { return command_; }
  const nlohmann::ordered_json& config() const { return config_; }
  std::ostream& log() const { return log_; }

  std::string text(const std::string& name) const;
  std::filesystem::path path(const std::string& name) const;
  long integer(const std::string& name) const;
  double number(const std::string& name) const;
  bool flag(const std::string& name) const;
  std::vector<double> numbers(const std::string& name) const;
  std::vector<long> integers(const std::string& name) const;
  std::vector<std::string> texts(const std::string& name) const;
  /// True when a text or path setting is non-empty.
  bool has(const std::string& name) const;

  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }
  const std::filesystem::path& out() const { return out_; }
  /// `out() / relative`, creating parent directories.
  std::filesystem::path output(const std::filesystem::path& relative) const;

 private:
  const nlohmann::ordered_json& at(const std::string& name) const;

  std::string command_;
  nlohmann::ordered_json config_;
  std::filesystem::path out_;
  std::ostream& log_;
};

struct Command {
  std::string name;
  std::string summary;
  std::vector<Param> params;
  std::function<void(RunContext&)> run;
};

/// Converts a raw flag string to the JSON value of a parameter kind; throws ConfigError.
nlohmann::ordered_json parse_value(const Param& param, const std::string& raw);
/// Checks and normalizes a config-file value; throws ConfigError.
nlohmann::ordered_json coerce_value(const Param& param, const nlohmann::json& value);

/// Tab-separated table with a header row.
class Table {
 public:
  explicit Table(std::vector<std::string> header);
  void add(std::vector<std::string> cells);
  std::size_t rows() const { return rows_.size(); }
  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Shortest round-trippable rendering with at most 10 significant digits.
std::string fmt(double value);

/// The standard statistics table: one row per report.
Table stat_table(const std::vector<metrics::StatReport>& reports);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace retinavl::cli
