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

#include "cli/common.hpp"

#include "retinavl/core/error.hpp"
#include "retinavl/data/preprocess.hpp"
#include "retinavl/metrics/stats.hpp"

#include <fstream>
#include <sstream>

namespace retinavl::cli {

Param preprocess_param() {
  return {"preprocess", Kind::text, "none", "image preparation: none (resize only), CFP, FFA or UWF"};
}
Param bootstrap_param() { return {"bootstrap", Kind::integer, 2000, "bootstrap resamples for confidence intervals"}; }
Param split_param(const std::string& fallback) {
  return {"split", Kind::text, fallback, "manifest split to use (empty: all records)"};
}

Image load_for_model(const std::filesystem::path& path, int side, const std::string& preprocess) {
  const Image img = read_image(path);
  if (preprocess == "none") {
    if (img.height() == side && img.width() == side) return img;
    return resize_bilinear(img, side, side);
  }
  return data::preprocess_image(img, data::parse_modality(preprocess), side);
}

std::vector<Image> load_images(const data::DatasetManifest& manifest, int side, const std::string& preprocess) {
  std::vector<Image> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    try {
      out.push_back(load_for_model(manifest.resolve(r), side, preprocess));
    } catch (const Error& e) {
      throw UnusableRecordError(r.image_id + ": " + e.what());
    }
  }
  return out;
}

data::DatasetManifest load_manifest(const RunContext& ctx, const std::string& name, const std::string& split_setting) {
  auto m = data::parse_manifest(ctx.path(name));
  if (!split_setting.empty() && ctx.has(split_setting)) m = m.subset(data::parse_split(ctx.text(split_setting)));
  return m;
}

metrics::Mask read_mask(const std::filesystem::path& path, int height, int width) {
  Image img = read_image(path);
  if (img.height() != height || img.width() != width) img = resize_bilinear(img, height, width);
  return img.max_channel() > 0.5;
}

metrics::BootstrapOptions bootstrap_options(const RunContext& ctx) {
  metrics::BootstrapOptions o;
  o.n_resamples = static_cast<int>(ctx.integer("bootstrap"));
  o.seed = ctx.seed();
  return o;
}

metrics::StatReport mean_report(const std::string& name, const std::vector<double>& values,
                                const metrics::BootstrapOptions& opts) {
  metrics::ScoreSet set;
  set.scores = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  set.labels = metrics::LabelMatrix::Zero(set.scores.rows(), 1);
  auto r = metrics::bootstrap_ci([](const metrics::ScoreSet& s) { return s.scores.mean(); }, set, opts);
  r.metric = name;
  return r;
}

bool is_one_hot(const metrics::LabelMatrix& labels) {
  for (Eigen::Index i = 0; i < labels.rows(); ++i)
    if (labels.row(i).sum() != 1 || labels.row(i).minCoeff() < 0 || labels.row(i).maxCoeff() > 1) return false;
  return labels.rows() > 0;
}

namespace {

using metrics::ScoreSet;

// Mean over columns where `per` is defined; undefined when none is.
double macro_over(const ScoreSet& s, const std::function<double(const Vector&, const metrics::Labels&)>& per) {
  double sum = 0;
  int n = 0;
  for (Eigen::Index c = 0; c < s.columns(); ++c) {
    try {
      sum += per(s.scores.col(c), s.labels.col(c));
      ++n;
    } catch (const UndefinedMetricError&) {
    }
  }
  if (n == 0) throw UndefinedMetricError("metric undefined for every class");
  return sum / n;
}

}  // namespace

std::vector<metrics::StatReport> classification_reports(const ScoreSet& set, const std::vector<std::string>& classes,
                                                        data::LabelMode mode, const std::optional<Vector>& thresholds,
                                                        const metrics::BootstrapOptions& opts, std::ostream& log) {
  RVL_CHECK(static_cast<Eigen::Index>(classes.size()) == set.columns(), ShapeError, "one class name per column");
  std::vector<std::pair<std::string, metrics::Metric>> plan;
  plan.emplace_back("macro_auroc", [](const ScoreSet& s) { return metrics::macro_auroc(s); });
  plan.emplace_back("macro_aupr", [](const ScoreSet& s) { return metrics::macro_aupr(s); });
  if (mode == data::LabelMode::single_label && set.columns() > 1) {
    plan.emplace_back("accuracy_top1", [](const ScoreSet& s) {
      long hit = 0;
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        Eigen::Index k = 0;
        s.scores.row(i).maxCoeff(&k);
        hit += s.labels(i, k) == 1;
      }
      return static_cast<double>(hit) / static_cast<double>(s.size());
    });
  }
  plan.emplace_back("macro_sensitivity_at_95_specificity", [](const ScoreSet& s) {
    return macro_over(s, [](const Vector& v, const metrics::Labels& l) {
      return metrics::sensitivity_at_specificity(v, l, 0.95);
    });
  });
  if (thresholds) {
    const Vector th = *thresholds;
    RVL_CHECK(th.size() == set.columns(), ShapeError, "one threshold per class required");
    using Field = double metrics::ConfusionMetrics::*;
    const std::pair<const char*, Field> fields[] = {{"accuracy", &metrics::ConfusionMetrics::accuracy},
                                                    {"sensitivity", &metrics::ConfusionMetrics::sensitivity},
                                                    {"specificity", &metrics::ConfusionMetrics::specificity},
                                                    {"precision", &metrics::ConfusionMetrics::precision},
                                                    {"f1", &metrics::ConfusionMetrics::f1}};
    for (const auto& [name, field] : fields) {
      plan.emplace_back(std::string("macro_") + name, [th, field = field](const ScoreSet& s) {
        double sum = 0;
        for (Eigen::Index c = 0; c < s.columns(); ++c)
          sum += metrics::confusion_metrics(s.scores.col(c), s.labels.col(c), th(c)).*field;
        return sum / static_cast<double>(s.columns());
      });
    }
  }
  for (Eigen::Index c = 0; c < set.columns(); ++c) {
    plan.emplace_back("auroc:" + classes[static_cast<std::size_t>(c)],
                      [c](const ScoreSet& s) { return metrics::auroc(s.scores.col(c), s.labels.col(c)); });
    plan.emplace_back("aupr:" + classes[static_cast<std::size_t>(c)],
                      [c](const ScoreSet& s) { return metrics::aupr(s.scores.col(c), s.labels.col(c)); });
  }
  std::vector<metrics::StatReport> out;
  for (const auto& [name, metric] : plan) {
    try {
      auto r = metrics::bootstrap_ci(metric, set, opts);
      r.metric = name;
      out.push_back(r);
    } catch (const UndefinedMetricError& e) {
      log << "skipped " << name << ": " << e.what() << "\n";
    }
  }
  return out;
}

Table score_table(const ScoreSet& set, const std::vector<std::string>& classes) {
  std::vector<std::string> header{"id"};
  for (const auto& c : classes) header.push_back("label:" + c);
  for (const auto& c : classes) header.push_back("score:" + c);
  Table t(header);
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    std::vector<std::string> row{set.ids.empty() ? std::to_string(i) : set.ids[static_cast<std::size_t>(i)]};
    for (Eigen::Index c = 0; c < set.columns(); ++c) row.push_back(std::to_string(set.labels(i, c)));
    for (Eigen::Index c = 0; c < set.columns(); ++c) row.push_back(fmt(set.scores(i, c)));
    t.add(row);
  }
  return t;
}

ScoreTable read_score_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    if (!line.empty() && line.back() == '\t') cells.emplace_back();
    return cells;
  };
  std::string line;
  RVL_CHECK(static_cast<bool>(std::getline(in, line)), ParseError, path.string() + ": empty score table");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  RVL_CHECK(!header.empty() && header[0] == "id", ParseError, path.string() + ": first column must be id");
  ScoreTable t;
  for (std::size_t k = 1; k < header.size(); ++k) {
    if (header[k].rfind("label:", 0) == 0) t.classes.push_back(header[k].substr(6));
  }
  const std::size_t c = t.classes.size();
  RVL_CHECK(c > 0 && header.size() == 1 + 2 * c, ParseError, path.string() + ": expected label:* then score:* columns");
  for (std::size_t k = 0; k < c; ++k)
    RVL_CHECK(header[1 + c + k] == "score:" + t.classes[k], ParseError,
              path.string() + ": score columns must follow the label column order");
  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split(line);
    RVL_CHECK(cells.size() == header.size(), ParseError,
              path.string() + ":" + std::to_string(line_no) + ": wrong number of columns");
    rows.push_back(std::move(cells));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  t.set.scores.resize(n, static_cast<Eigen::Index>(c));
  t.set.labels.resize(n, static_cast<Eigen::Index>(c));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    t.set.ids.push_back(r[0]);
    for (std::size_t k = 0; k < c; ++k) {
      try {
        t.set.labels(i, static_cast<Eigen::Index>(k)) = std::stoi(r[1 + k]);
        t.set.scores(i, static_cast<Eigen::Index>(k)) = std::stod(r[1 + c + k]);
      } catch (const std::exception&) {
        throw ParseError(path.string() + ": row " + std::to_string(i + 2) + " has a non-numeric cell");
      }
    }
  }
  t.set.validate();
  return t;
}

}  // namespace retinavl::cli
