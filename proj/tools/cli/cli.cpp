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

#include "cli/cli.hpp"

#include "retinavl/core/error.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <map>
#include <memory>
#include <sstream>

namespace retinavl::cli {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<Command> all_commands() {
  return {curate_command(),      pretrain_command(),    zeroshot_eval_command(), localize_command(),
          masking_study_command(), probe_command(),     finetune_command(),      segment_command(),
          label_curve_command(), metrics_command(),     serve_command(),         export_embeddings_command()};
}

namespace {

std::vector<Param> with_globals(const Command& c) {
  auto params = c.params;
  params.push_back({"seed", Kind::integer, 0, "global seed"});
  params.push_back({"out", Kind::path, nullptr, "output directory"});
  return params;
}

std::string describe(const Param& p) {
  std::string h = p.help;
  if (p.fallback.is_null()) return h + " (required)";
  if (p.fallback.is_string() && p.fallback.get<std::string>().empty()) return h;
  if (p.fallback.is_array()) {
    std::string s;
    for (const auto& e : p.fallback) s += (s.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
    return h + " [" + s + "]";
  }
  return h + " [" + (p.fallback.is_string() ? p.fallback.get<std::string>() : p.fallback.dump()) + "]";
}

struct Bound {
  const Command* command = nullptr;
  CLI::App* app = nullptr;
  std::vector<Param> params;
  std::map<std::string, std::string> raw;
  std::map<std::string, CLI::Option*> options;
  std::string config_file;
};

ordered_json resolve(const Bound& b) {
  json file = json::object();
  if (!b.config_file.empty()) {
    std::ifstream in(b.config_file);
    RVL_CHECK(static_cast<bool>(in), ConfigError, "cannot read config file " + b.config_file);
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError(b.config_file + ": " + e.what());
    }
    RVL_CHECK(file.is_object(), ConfigError, b.config_file + ": config must be a JSON object");
    for (const auto& [key, value] : file.items()) {
      bool known = false;
      for (const auto& p : b.params) known = known || p.name == key;
      RVL_CHECK(known, ConfigError, b.config_file + ": unknown setting '" + key + "'");
    }
  }
  ordered_json resolved = ordered_json::object();
  for (const auto& p : b.params) {
    ordered_json v = p.fallback.is_null() ? ordered_json() : coerce_value(p, p.fallback);
    if (file.contains(p.name)) v = coerce_value(p, file[p.name]);
    if (b.options.at(p.name)->count() > 0) v = parse_value(p, b.raw.at(p.name));
    RVL_CHECK(!v.is_null(), ConfigError, "missing required setting --" + p.name);
    resolved[p.name] = v;
  }
  return resolved;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto commands = all_commands();
  CLI::App app{"Retinal vision-language toolkit", "retinavl"};
  app.require_subcommand(1, 1);
  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& c : commands) {
    auto b = std::make_unique<Bound>();
    b->command = &c;
    b->params = with_globals(c);
    b->app = app.add_subcommand(c.name, c.summary);
    b->app->add_option("--config", b->config_file, "JSON file of settings; flags override it");
    for (const auto& p : b->params) {
      auto* opt = b->app->add_option("--" + p.name, b->raw[p.name], describe(p));
      if (p.kind == Kind::flag) opt->expected(0, 1);
      b->options[p.name] = opt;
    }
    bound.push_back(std::move(b));
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const Bound* chosen = nullptr;
  for (const auto& b : bound)
    if (b->app->parsed()) chosen = b.get();
  if (!chosen) return kExitUsage;

  ordered_json config;
  try {
    config = resolve(*chosen);
  } catch (const Error& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  RunContext ctx(chosen->command->name, config, err);
  try {
    std::filesystem::create_directories(ctx.out());
    ordered_json snapshot{{"command", chosen->command->name}, {"settings", config}};
    write_text(ctx.out() / "config.json", snapshot.dump(2) + "\n");
    chosen->command->run(ctx);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    try {
      std::filesystem::create_directories(ctx.out());
      write_text(ctx.out() / "error.log", chosen->command->name + ": " + e.what() + "\n");
    } catch (const std::exception&) {
    }
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace retinavl::cli
