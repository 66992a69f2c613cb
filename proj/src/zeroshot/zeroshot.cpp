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

#include "retinavl/zeroshot/zeroshot.hpp"

#include "retinavl/core/error.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>

namespace retinavl::zeroshot {

using nlohmann::ordered_json;

PromptEnsemble PromptEnsemble::from_templates(const std::vector<std::string>& classes,
                                              const std::vector<std::string>& templates) {
  RVL_CHECK(!templates.empty(), ConfigError, "no prompt templates");
  PromptEnsemble e;
  e.classes = classes;
  for (const auto& c : classes) {
    std::vector<std::string> list;
    for (std::string t : templates) {
      for (auto pos = t.find("{class}"); pos != std::string::npos; pos = t.find("{class}", pos + c.size()))
        t.replace(pos, 7, c);
      list.push_back(t);
    }
    e.prompts.push_back(std::move(list));
  }
  return e;
}

PromptEnsemble PromptEnsemble::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open prompt file " + path.string());
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const ordered_json::exception& e) {
    throw ParseError(std::string("prompt file: ") + e.what(), 0);
  }
  PromptEnsemble e;
  try {
    if (j.is_object()) {
      for (const auto& [cls, list] : j.items()) {
        e.classes.push_back(cls);
        e.prompts.push_back(list.get<std::vector<std::string>>());
      }
    } else if (j.is_array()) {
      for (const auto& entry : j) {
        e.classes.push_back(entry.at("class").get<std::string>());
        e.prompts.push_back(entry.at("prompts").get<std::vector<std::string>>());
      }
    } else {
      throw ConfigError("prompt file must hold an object or an array");
    }
  } catch (const ordered_json::exception& ex) {
    throw ConfigError(std::string("prompt file: ") + ex.what());
  }
  e.validate();
  return e;
}

void PromptEnsemble::save(const std::filesystem::path& path) const {
  ordered_json j = ordered_json::object();
  for (std::size_t i = 0; i < classes.size(); ++i) j[classes[i]] = prompts[i];
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

PromptEnsemble PromptEnsemble::select(const std::vector<std::string>& wanted) const {
  PromptEnsemble out;
  for (const auto& c : wanted) {
    const auto it = std::find(classes.begin(), classes.end(), c);
    RVL_CHECK(it != classes.end(), ConfigError, "no prompts for class '" + c + "'");
    out.classes.push_back(c);
    out.prompts.push_back(prompts[static_cast<std::size_t>(it - classes.begin())]);
  }
  return out;
}

void PromptEnsemble::validate() const {
  RVL_CHECK(classes.size() == prompts.size(), ConfigError, "prompt lists do not match classes");
  RVL_CHECK(!classes.empty(), ConfigError, "prompt ensemble has no classes");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    RVL_CHECK(seen.insert(classes[i]).second, ConfigError, "duplicate class '" + classes[i] + "' in prompt ensemble");
    RVL_CHECK(!prompts[i].empty(), ConfigError, "class '" + classes[i] + "' has no prompts");
  }
}

Matrix build_class_embeddings(const PromptEnsemble& ensemble, const TextEncoder& encoder,
                              const ClassEmbeddingOptions& options) {
  ensemble.validate();
  Matrix out;
  for (std::size_t c = 0; c < ensemble.classes.size(); ++c) {
    Vector mean;
    for (const auto& prompt : ensemble.prompts[c]) {
      const Vector e = encoder(prompt);
      if (mean.size() == 0) mean = Vector::Zero(e.size());
      RVL_CHECK(e.size() == mean.size(), ShapeError, "text encoder returned inconsistent widths");
      mean += e;
    }
    mean /= static_cast<double>(ensemble.prompts[c].size());
    if (options.renormalize) {
      RVL_CHECK(mean.norm() > 0, NumericError, "class '" + ensemble.classes[c] + "' averages to a zero vector");
      mean.normalize();
    }
    if (out.size() == 0) out.resize(static_cast<Eigen::Index>(ensemble.classes.size()), mean.size());
    out.row(static_cast<Eigen::Index>(c)) = mean.transpose();
  }
  return out;
}

Matrix build_class_embeddings(const PromptEnsemble& ensemble, const encoders::Model& model,
                              const ClassEmbeddingOptions& options) {
  return build_class_embeddings(
      ensemble, [&model](const std::string& s) { return encoders::encode_text(model, s); }, options);
}

std::vector<int> PredictionMatrix::argmax() const {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);
    out.push_back(static_cast<int>(best));
  }
  return out;
}

void PredictionMatrix::validate() const {
  RVL_CHECK(scores.allFinite(), NumericError, "prediction matrix has non-finite entries");
  RVL_CHECK(classes.empty() || static_cast<Eigen::Index>(classes.size()) == scores.cols(), ShapeError,
            "prediction columns do not match the class list");
  RVL_CHECK(ids.empty() || static_cast<Eigen::Index>(ids.size()) == scores.rows(), ShapeError,
            "prediction rows do not match the id list");
}

PredictionMatrix zero_shot_classify(const Matrix& image_embeddings, const Matrix& class_embeddings,
                                    const std::vector<std::string>& classes, data::LabelMode mode) {
  RVL_CHECK(image_embeddings.cols() == class_embeddings.cols(), ShapeError,
            "zero_shot_classify: image width " + std::to_string(image_embeddings.cols()) + " differs from class width " +
                std::to_string(class_embeddings.cols()));
  auto unit = [](const Matrix& m, const char* what) {
    const Vector n = m.rowwise().norm();
    RVL_CHECK((n.array() > 0).all() && n.allFinite(), NumericError, std::string("zero-norm or non-finite ") + what);
    return Matrix(n.cwiseInverse().asDiagonal() * m);
  };
  PredictionMatrix p;
  p.scores = unit(image_embeddings, "image embedding") * unit(class_embeddings, "class embedding").transpose();
  p.classes = classes;
  p.mode = mode;
  p.validate();
  return p;
}

TrimmedLabels apply_benchmark_trim(const metrics::LabelMatrix& labels, const data::LabelSchema& schema) {
  RVL_CHECK(labels.cols() == static_cast<Eigen::Index>(schema.classes.size()), ShapeError,
            "label columns do not match the schema");
  TrimmedLabels t;
  t.classes = schema.classes;
  for (std::size_t c = 0; c < schema.classes.size(); ++c) t.column_sources.push_back({static_cast<int>(c)});
  std::vector<Eigen::VectorXi> cols;
  for (Eigen::Index c = 0; c < labels.cols(); ++c) cols.push_back(labels.col(c));
  std::vector<bool> keep(static_cast<std::size_t>(labels.rows()), true);

  auto find = [&t](const std::string& name) {
    const auto it = std::find(t.classes.begin(), t.classes.end(), name);
    return it == t.classes.end() ? -1 : static_cast<int>(it - t.classes.begin());
  };
  auto erase = [&](int c) {
    t.classes.erase(t.classes.begin() + c);
    t.column_sources.erase(t.column_sources.begin() + c);
    cols.erase(cols.begin() + c);
  };

  for (const auto& rule : schema.trim_rules) {
    std::vector<int> idx;
    for (const auto& s : rule.sources) {
      const int c = find(s);
      RVL_CHECK(c >= 0, ConfigError, "trim rule references unknown class '" + s + "'");
      idx.push_back(c);
    }
    if (rule.kind == data::TrimRule::Kind::merge) {
      Eigen::VectorXi merged = Eigen::VectorXi::Zero(labels.rows());
      std::vector<int> sources;
      for (int c : idx) {
        merged = merged.cwiseMax(cols[static_cast<std::size_t>(c)]);
        sources.insert(sources.end(), t.column_sources[static_cast<std::size_t>(c)].begin(),
                       t.column_sources[static_cast<std::size_t>(c)].end());
      }
      const int anchor = *std::min_element(idx.begin(), idx.end());
      // Remove sources (except a target listed among them), highest index first.
      std::vector<int> order = idx;
      std::sort(order.rbegin(), order.rend());
      for (int c : order)
        if (t.classes[static_cast<std::size_t>(c)] != rule.target) erase(c);
      const int target = find(rule.target);
      if (target < 0) {
        int at = 0;
        for (int c : idx) at += c < anchor;  // sources before the anchor were removed
        at = anchor - at;
        t.classes.insert(t.classes.begin() + at, rule.target);
        t.column_sources.insert(t.column_sources.begin() + at, sources);
        cols.insert(cols.begin() + at, merged);
      } else {
        auto& col = cols[static_cast<std::size_t>(target)];
        col = col.cwiseMax(merged);
        auto& src = t.column_sources[static_cast<std::size_t>(target)];
        for (int s : sources)
          if (std::find(src.begin(), src.end(), s) == src.end()) src.push_back(s);
        std::sort(src.begin(), src.end());
      }
    } else {
      if (schema.mode == data::LabelMode::single_label)
        for (int c : idx)
          for (Eigen::Index r = 0; r < labels.rows(); ++r)
            if (cols[static_cast<std::size_t>(c)](r) != 0) keep[static_cast<std::size_t>(r)] = false;
      std::vector<int> order = idx;
      std::sort(order.rbegin(), order.rend());
      for (int c : order) erase(c);
    }
  }
  for (Eigen::Index r = 0; r < labels.rows(); ++r)
    if (keep[static_cast<std::size_t>(r)]) t.rows.push_back(r);
  t.labels.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 0; r < t.rows.size(); ++r)
      t.labels(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = cols[c](t.rows[r]);
  return t;
}

PredictionMatrix trim_predictions(const PredictionMatrix& predictions, const TrimmedLabels& view) {
  PredictionMatrix out;
  out.classes = view.classes;
  out.mode = predictions.mode;
  out.scores.resize(static_cast<Eigen::Index>(view.rows.size()), static_cast<Eigen::Index>(view.classes.size()));
  for (std::size_t r = 0; r < view.rows.size(); ++r) {
    RVL_CHECK(view.rows[r] < predictions.scores.rows(), ShapeError, "trimmed view refers past the prediction rows");
    if (!predictions.ids.empty()) out.ids.push_back(predictions.ids[static_cast<std::size_t>(view.rows[r])]);
    for (std::size_t c = 0; c < view.classes.size(); ++c) {
      double best = -std::numeric_limits<double>::infinity();
      for (int s : view.column_sources[c]) best = std::max(best, predictions.scores(view.rows[r], s));
      out.scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = best;
    }
  }
  return out;
}

Vector eye_level_average(const std::vector<Vector>& view_scores) {
  RVL_CHECK(!view_scores.empty(), ValidationError, "eye_level_average: no views");
  Vector sum = Vector::Zero(view_scores.front().size());
  for (const auto& v : view_scores) {
    RVL_CHECK(v.size() == sum.size(), ShapeError, "eye_level_average: views differ in length");
    sum += v;
  }
  return sum / static_cast<double>(view_scores.size());
}

PredictionMatrix average_by_group(const PredictionMatrix& predictions, const std::vector<std::string>& keys) {
  RVL_CHECK(static_cast<Eigen::Index>(keys.size()) == predictions.scores.rows(), ShapeError,
            "average_by_group: one key per row required");
  std::vector<std::string> order;
  std::map<std::string, std::vector<Vector>> groups;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!groups.count(keys[i])) order.push_back(keys[i]);
    groups[keys[i]].push_back(predictions.scores.row(static_cast<Eigen::Index>(i)).transpose());
  }
  PredictionMatrix out;
  out.classes = predictions.classes;
  out.mode = predictions.mode;
  out.ids = order;
  out.scores.resize(static_cast<Eigen::Index>(order.size()), predictions.scores.cols());
  for (std::size_t g = 0; g < order.size(); ++g)
    out.scores.row(static_cast<Eigen::Index>(g)) = eye_level_average(groups[order[g]]).transpose();
  return out;
}

void write_predictions_jsonl(const std::filesystem::path& path, const PredictionMatrix& predictions) {
  predictions.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (Eigen::Index i = 0; i < predictions.scores.rows(); ++i) {
    ordered_json scores = ordered_json::object();
    for (Eigen::Index c = 0; c < predictions.scores.cols(); ++c) {
      const std::string name = predictions.classes.empty() ? std::to_string(c) : predictions.classes[static_cast<std::size_t>(c)];
      scores[name] = predictions.scores(i, c);
    }
    const std::string id = predictions.ids.empty() ? std::to_string(i) : predictions.ids[static_cast<std::size_t>(i)];
    out << ordered_json{{"id", id}, {"scores", scores}}.dump() << '\n';
  }
}

}  // namespace retinavl::zeroshot
