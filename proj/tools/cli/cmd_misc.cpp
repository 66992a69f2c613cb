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

// metrics and serve.

#include "cli/cli.hpp"
#include "cli/common.hpp"

#include "retinavl/core/error.hpp"
#include "retinavl/metrics/stats.hpp"
#include "retinavl/readerstudy/api.hpp"

#include <fstream>
#include <sstream>

namespace retinavl::cli {

namespace {

using nlohmann::json;

/// Reorders `b` to the row order of `a` by id.
metrics::ScoreSet align_to(const metrics::ScoreSet& a, const metrics::ScoreSet& b) {
  RVL_CHECK(a.size() == b.size() && a.columns() == b.columns(), ValidationError,
            "compared score tables differ in shape");
  std::map<std::string, Eigen::Index> where;
  for (std::size_t i = 0; i < b.ids.size(); ++i) where[b.ids[i]] = static_cast<Eigen::Index>(i);
  std::vector<Eigen::Index> rows;
  for (const auto& id : a.ids) {
    auto it = where.find(id);
    RVL_CHECK(it != where.end(), ValidationError, "id " + id + " missing from the compared table");
    rows.push_back(it->second);
  }
  auto out = b.select(rows);
  RVL_CHECK(out.labels == a.labels, ValidationError, "compared tables carry different labels");
  return out;
}

struct Regression {
  std::vector<std::string> ids;
  Vector target, prediction;
};

Regression read_regression(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  RVL_CHECK(line == "id\ttarget\tprediction", ParseError, path.string() + ": header must be id, target, prediction");
  std::vector<std::string> ids;
  std::vector<double> t, p;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, a, b;
    RVL_CHECK(std::getline(ss, id, '\t') && std::getline(ss, a, '\t') && std::getline(ss, b, '\t'), ParseError,
              path.string() + ":" + std::to_string(n) + ": expected three columns");
    try {
      t.push_back(std::stod(a));
      p.push_back(std::stod(b));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(n) + ": non-numeric value");
    }
    ids.push_back(id);
  }
  Regression r{ids, Vector(static_cast<Eigen::Index>(t.size())), Vector(static_cast<Eigen::Index>(p.size()))};
  for (std::size_t i = 0; i < t.size(); ++i) {
    r.target(static_cast<Eigen::Index>(i)) = t[i];
    r.prediction(static_cast<Eigen::Index>(i)) = p[i];
  }
  return r;
}

void classification(RunContext& ctx) {
  const auto table = read_score_table(ctx.path("scores"));
  const auto& set = table.set;
  const auto mode = ctx.has("mode") ? data::parse_label_mode(ctx.text("mode"))
                    : (is_one_hot(set.labels) && set.columns() > 1) ? data::LabelMode::single_label
                                                                    : data::LabelMode::multi_label;
  std::optional<Vector> thresholds;
  if (ctx.has("thresholds-from")) {
    const auto val = read_score_table(ctx.path("thresholds-from"));
    RVL_CHECK(val.classes == table.classes, ValidationError, "validation table has different classes");
    thresholds = metrics::optimize_thresholds(val.set);
  } else if (ctx.number("threshold") >= 0) {
    thresholds = Vector::Constant(set.columns(), ctx.number("threshold"));
  }
  if (thresholds) {
    Table th({"class", "threshold"});
    for (std::size_t c = 0; c < table.classes.size(); ++c)
      th.add({table.classes[c], fmt((*thresholds)(static_cast<Eigen::Index>(c)))});
    th.write(ctx.output("thresholds.tsv"));
  }
  auto opts = bootstrap_options(ctx);
  opts.by_id = ctx.flag("by-id");
  auto reports = classification_reports(set, table.classes, mode, thresholds, opts, ctx.log());

  if (ctx.has("compare")) {
    const auto other = read_score_table(ctx.path("compare"));
    RVL_CHECK(other.classes == table.classes, ValidationError, "compared table has different classes");
    const auto b = align_to(set, other.set);
    const std::string name = ctx.path("compare").filename().string();
    const std::pair<const char*, metrics::Metric> plan[] = {
        {"macro_auroc", [](const metrics::ScoreSet& x) { return metrics::macro_auroc(x); }},
        {"macro_aupr", [](const metrics::ScoreSet& x) { return metrics::macro_aupr(x); }}};
    for (const auto& [metric, fn] : plan) {
      const auto cmp = metrics::bootstrap_pvalue(fn, set, b, opts);
      for (auto& r : reports)
        if (r.metric == metric) {
          r.p_value = cmp.p_value;
          r.comparator = name;
        }
      auto rb = metrics::bootstrap_ci(fn, b, opts);
      rb.metric = std::string(metric) + ":" + name;
      rb.p_value = cmp.p_value;
      rb.comparator = "scores";
      reports.push_back(rb);
    }
  }
  stat_table(reports).write(ctx.output("metrics.tsv"));
}

void regression(RunContext& ctx) {
  const auto r = read_regression(ctx.path("scores"));
  metrics::ScoreSet set;
  set.scores.resize(r.target.size(), 2);
  set.scores.col(0) = r.prediction;
  set.scores.col(1) = r.target;
  set.labels = metrics::LabelMatrix::Zero(r.target.size(), 1);
  set.ids = r.ids;
  auto opts = bootstrap_options(ctx);
  opts.by_id = ctx.flag("by-id");
  std::vector<metrics::StatReport> reports;
  const std::pair<const char*, metrics::Metric> plan[] = {
      {"pearson_r", [](const metrics::ScoreSet& x) { return metrics::pearson_r2(x.scores.col(0), x.scores.col(1)).pearson(); }},
      {"r2", [](const metrics::ScoreSet& x) { return metrics::pearson_r2(x.scores.col(0), x.scores.col(1)).r2; }},
      {"mae", [](const metrics::ScoreSet& x) { return (x.scores.col(0) - x.scores.col(1)).cwiseAbs().mean(); }}};
  for (const auto& [name, fn] : plan) {
    try {
      auto rep = metrics::bootstrap_ci(fn, set, opts);
      rep.metric = name;
      reports.push_back(rep);
    } catch (const UndefinedMetricError& e) {
      ctx.log() << "skipped " << name << ": " << e.what() << "\n";
    }
  }
  stat_table(reports).write(ctx.output("metrics.tsv"));
}

void metrics_run(RunContext& ctx) {
  const std::string task = ctx.text("task");
  RVL_CHECK(task == "classification" || task == "regression", ConfigError, "task must be classification or regression");
  RVL_CHECK(ctx.has("scores") || !ctx.numbers("runs-a").empty(), ConfigError, "give --scores or --runs-a/--runs-b");
  if (ctx.has("scores")) {
    if (task == "classification") classification(ctx);
    else regression(ctx);
  }
  const auto a = ctx.numbers("runs-a"), b = ctx.numbers("runs-b");
  if (!a.empty() || !b.empty()) {
    const auto t = metrics::t_test_two_sided(Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size())),
                                             Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size())));
    Table tt({"n_a", "n_b", "t", "dof", "p_value"});
    tt.add({std::to_string(a.size()), std::to_string(b.size()), fmt(t.t), fmt(t.dof), fmt(t.p_value)});
    tt.write(ctx.output("ttest.tsv"));
  }
}

void write_report(const RunContext& ctx, const readerstudy::StudyReport& report) {
  write_text(ctx.output("report.json"), report.to_json().dump(2) + "\n");
  Table acc({"group", "n", "pre", "pre_ci_low", "pre_ci_high", "post", "post_ci_low", "post_ci_high", "mcnemar_b",
             "mcnemar_c", "mcnemar_p"});
  for (const auto& r : report.accuracy)
    acc.add({r.group, std::to_string(r.n), fmt(r.pre), fmt(r.pre_ci.ci_low), fmt(r.pre_ci.ci_high), fmt(r.post),
             fmt(r.post_ci.ci_low), fmt(r.post_ci.ci_high), std::to_string(r.mcnemar.b), std::to_string(r.mcnemar.c),
             fmt(r.mcnemar.p_value)});
  acc.write(ctx.output("accuracy.tsv"));
  Table out({"outcome", "count"});
  for (const auto& [k, v] : report.outcomes) out.add({k, std::to_string(v)});
  out.write(ctx.output("outcomes.tsv"));
}

void serve(RunContext& ctx) {
  auto config = readerstudy::StudyConfig::load(ctx.path("study"));
  const auto log = ctx.has("log") ? ctx.path("log") : ctx.out() / "events.jsonl";
  std::unique_ptr<readerstudy::Study> study = std::filesystem::exists(log)
                                                  ? readerstudy::Study::replay(config, log)
                                                  : std::make_unique<readerstudy::Study>(config);
  readerstudy::ApiOptions opts;
  opts.asset_root = ctx.has("assets") ? ctx.path("assets") : ctx.path("study").parent_path();
  opts.report.bootstrap_resamples = static_cast<int>(ctx.integer("bootstrap"));
  opts.report.seed = ctx.seed();
  opts.report.conflict_top5 = ctx.flag("conflict-top5");
  opts.report.classify.corrective_top5 = ctx.flag("corrective-top5");

  if (ctx.flag("report-only")) {
    write_report(ctx, readerstudy::aggregate_results(study->sessions(), study->config(), study->questionnaires(),
                                                     opts.report));
    return;
  }
  study->open_log(log);
  readerstudy::Api api(*study, opts);
  readerstudy::Server server(api);
  const std::string host = ctx.text("host");
  int port = static_cast<int>(ctx.integer("port"));
  if (port == 0) port = server.bind_any_port(host);
  RVL_CHECK(port > 0, IoError, "cannot bind " + host);
  ctx.log() << "serving on http://" << host << ":" << port << " (event log " << log.string() << ")\n";
  const bool ok = ctx.integer("port") == 0 ? server.listen_after_bind() : server.listen(host, port);
  RVL_CHECK(ok, IoError, "server stopped with an error on " + host + ":" + std::to_string(port));
}

}  // namespace

Command metrics_command() {
  return {"metrics",
          "statistics for a score table, a paired comparison or two sets of runs",
          {{"scores", Kind::path, "", "score table (classification) or id/target/prediction table (regression)"},
           {"task", Kind::text, "classification", "classification or regression"},
           {"mode", Kind::text, "", "single_label or multi_label (default: inferred)"},
           {"thresholds-from", Kind::path, "", "validation score table for threshold optimization"},
           {"threshold", Kind::number, -1.0, "fixed threshold for every class (negative: none)"},
           {"compare", Kind::path, "", "second score table for paired bootstrap p-values"},
           {"by-id", Kind::flag, false, "resample by id groups"},
           {"runs-a", Kind::numbers, json::array(), "metric values of repeated runs, model A"},
           {"runs-b", Kind::numbers, json::array(), "metric values of repeated runs, model B"},
           bootstrap_param()},
          metrics_run};
}

Command serve_command() {
  return {"serve",
          "reader-study HTTP service (or, with --report-only, the aggregate report)",
          {{"study", Kind::path, nullptr, "study configuration JSON"},
           {"log", Kind::path, "", "event log (default: <out>/events.jsonl); replayed when present"},
           {"assets", Kind::path, "", "directory holding case images and heatmaps (default: the study file's)"},
           {"host", Kind::text, "127.0.0.1", "bind address"},
           {"port", Kind::integer, 8080, "port (0: any free port)"},
           {"report-only", Kind::flag, false, "write the aggregate report and exit"},
           {"conflict-top5", Kind::flag, false, "judge AI conflict against the whole top 5"},
           {"corrective-top5", Kind::flag, false, "count a correct top-5 suggestion as corrective"},
           bootstrap_param()},
          serve};
}

}  // namespace retinavl::cli
