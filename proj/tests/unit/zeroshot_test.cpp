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

#include "doctest.h"

#include "retinavl/core/error.hpp"
#include "retinavl/core/params.hpp"
#include "retinavl/zeroshot/zeroshot.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <random>

using namespace retinavl;
using namespace retinavl::zeroshot;
using data::LabelMode;
using data::LabelSchema;
using data::TrimRule;

namespace {

// Planted text encoder: a fixed lookup from prompt to vector.
struct Planted {
  std::map<std::string, Vector> table;
  TextEncoder encoder() const {
    return [this](const std::string& s) { return table.at(s); };
  }
};

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Independent per-pair cosine.
double cosine(const Vector& a, const Vector& b) {
  double ab = 0, aa = 0, bb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    ab += a(i) * b(i);
    aa += a(i) * a(i);
    bb += b(i) * b(i);
  }
  return ab / std::sqrt(aa * bb);
}

metrics::LabelMatrix one_hot(const std::vector<int>& y, int classes) {
  metrics::LabelMatrix m = metrics::LabelMatrix::Zero(static_cast<Eigen::Index>(y.size()), classes);
  for (std::size_t i = 0; i < y.size(); ++i) m(static_cast<Eigen::Index>(i), y[i]) = 1;
  return m;
}

}  // namespace

TEST_CASE("class embeddings average prompts and re-normalize") {
  Planted p;
  p.table["a"] = vec({3, 0, 0});
  p.table["b"] = vec({0, 4, 0});
  p.table["c"] = vec({0.6, 0.8, 0});
  PromptEnsemble e{{"x", "y", "z"}, {{"a", "b"}, {"c"}, {"c", "c"}}};
  const Matrix m = build_class_embeddings(e, p.encoder());
  // normalize((e1 + e2) / 2) by hand: (1.5, 2, 0) / 2.5.
  CHECK(m(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(m(0, 1) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(m.row(1).isApprox(p.table["c"].transpose()));
  CHECK(m.row(2) == m.row(1));

  const Matrix raw = build_class_embeddings(e, p.encoder(), {.renormalize = false});
  CHECK(raw(0, 0) == doctest::Approx(1.5));
  CHECK(raw(0, 1) == doctest::Approx(2.0));

  PromptEnsemble empty{{"x"}, {{}}};
  CHECK_THROWS_AS(build_class_embeddings(empty, p.encoder()), ConfigError);
}

TEST_CASE("templates expand the class name") {
  const auto e = PromptEnsemble::from_templates({"drusen", "normal"});
  REQUIRE(e.prompts.size() == 2);
  CHECK(e.prompts[0] == std::vector<std::string>{"drusen", "suspected drusen"});
  CHECK(e.select({"normal"}).prompts[0][1] == "suspected normal");
  CHECK_THROWS_AS(e.select({"glaucoma"}), ConfigError);
}

TEST_CASE("prompt files keep class order and round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "rvl_zeroshot_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "p.json");
    out << R"({"normal": ["normal fundus", "no abnormalities"], "drusen": ["drusen"], "AMD": ["suspected AMD"]})";
  }
  const auto e = PromptEnsemble::load(dir / "p.json");
  CHECK(e.classes == std::vector<std::string>{"normal", "drusen", "AMD"});
  CHECK(e.prompts[0][1] == "no abnormalities");
  e.save(dir / "q.json");
  const auto back = PromptEnsemble::load(dir / "q.json");
  CHECK(back.classes == e.classes);
  CHECK(back.prompts == e.prompts);
  {
    std::ofstream out(dir / "bad.json");
    out << R"({"normal": []})";
  }
  CHECK_THROWS_AS(PromptEnsemble::load(dir / "bad.json"), ConfigError);
}

TEST_CASE("classification equals the per-pair cosine oracle") {
  std::mt19937_64 rng(5);
  const Matrix images = random_normal(4, 3, 1.0, rng);
  const Matrix classes = random_normal(5, 3, 1.0, rng);
  const auto p = zero_shot_classify(images, classes);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 5; ++c)
      CHECK(std::abs(p.scores(i, c) - cosine(images.row(i).transpose(), classes.row(c).transpose())) <= 1e-12);

  // Scale invariance and self-similarity.
  CHECK((zero_shot_classify(3.0 * images, classes).scores - p.scores).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(zero_shot_classify(images, 0.25 * classes).argmax() == p.argmax());
  Matrix planted = images;
  planted.row(1) = 7.0 * classes.row(2);
  const auto q = zero_shot_classify(planted, classes);
  CHECK(q.argmax()[1] == 2);
  CHECK(q.scores(1, 2) == doctest::Approx(1.0).epsilon(1e-14));

  // Permuting classes permutes columns.
  Matrix perm(5, 3);
  const int order[5] = {3, 0, 4, 1, 2};
  for (int c = 0; c < 5; ++c) perm.row(c) = classes.row(order[c]);
  const auto r = zero_shot_classify(images, perm);
  for (int c = 0; c < 5; ++c) CHECK((r.scores.col(c) - p.scores.col(order[c])).norm() < 1e-14);

  CHECK_THROWS_AS(zero_shot_classify(images, random_normal(2, 4, 1.0, rng)), ShapeError);
}

TEST_CASE("merging PCV into wet-AMD relabels every PCV sample") {
  LabelSchema schema{{"normal", "wet-AMD", "PCV", "dry-AMD"}, LabelMode::single_label, {TrimRule::merge({"PCV"}, "wet-AMD")}};
  const std::vector<int> y = {0, 2, 1, 2, 3, 2};
  const auto t = apply_benchmark_trim(one_hot(y, 4), schema);
  CHECK(t.classes == std::vector<std::string>{"normal", "wet-AMD", "dry-AMD"});
  CHECK(t.labels.rows() == 6);
  CHECK(t.labels.col(1).sum() == 4);
  for (int i : {1, 3, 5}) CHECK(t.labels(i, 1) == 1);
  CHECK(t.column_sources[1] == std::vector<int>{1, 2});
}

TEST_CASE("dropping other diseases removes the class from predictions and labels") {
  LabelSchema schema{{"normal", "DR", "other diseases", "glaucoma"}, LabelMode::single_label,
                     {TrimRule::drop({"other diseases"})}};
  const std::vector<int> y = {0, 2, 1, 3, 2};
  const auto t = apply_benchmark_trim(one_hot(y, 4), schema);
  CHECK(t.classes == std::vector<std::string>{"normal", "DR", "glaucoma"});
  CHECK(t.rows == std::vector<Eigen::Index>{0, 2, 3});
  CHECK(t.labels == one_hot({0, 1, 2}, 3));

  PredictionMatrix p;
  p.classes = schema.classes;
  p.ids = {"a", "b", "c", "d", "e"};
  p.scores = Matrix::Random(5, 4);
  const auto q = trim_predictions(p, t);
  CHECK(q.scores.cols() == 3);
  CHECK(q.ids == std::vector<std::string>{"a", "c", "d"});
  CHECK(std::find(q.classes.begin(), q.classes.end(), "other diseases") == q.classes.end());
  CHECK(q.scores(1, 2) == p.scores(2, 3));

  // Multi-label drops only the column.
  schema.mode = LabelMode::multi_label;
  metrics::LabelMatrix ml(3, 4);
  ml << 1, 0, 1, 0, 0, 0, 1, 0, 0, 1, 0, 1;
  const auto m = apply_benchmark_trim(ml, schema);
  CHECK(m.labels.rows() == 3);
  CHECK(m.labels.cols() == 3);
}

TEST_CASE("DR1, DR2 and DR3 collapse into DR") {
  LabelSchema schema{{"normal", "DR1", "DR2", "DR3", "cataract"}, LabelMode::single_label,
                     {TrimRule::merge({"DR1", "DR2", "DR3"}, "DR")}};
  const std::vector<int> y = {0, 1, 2, 3, 4, 3};
  const auto t = apply_benchmark_trim(one_hot(y, 5), schema);
  CHECK(t.classes == std::vector<std::string>{"normal", "DR", "cataract"});
  CHECK(t.labels == one_hot({0, 1, 1, 1, 2, 1}, 3));
  CHECK(t.rows.size() == y.size());

  PredictionMatrix p;
  p.classes = schema.classes;
  p.scores = Matrix::Zero(6, 5);
  p.scores(1, 2) = 0.7;
  p.scores(1, 3) = 0.4;
  CHECK(trim_predictions(p, t).scores(1, 1) == 0.7);

  LabelSchema bad = schema;
  bad.trim_rules = {TrimRule::merge({"DR4"}, "DR")};
  CHECK_THROWS_AS(apply_benchmark_trim(one_hot(y, 5), bad), ConfigError);
}

TEST_CASE("eye-level averaging") {
  const Vector a = vec({0.2, 0.8});
  const Vector b = vec({0.4, 0.6});
  const Vector m = eye_level_average({a, b});
  CHECK(m(0) == doctest::Approx(0.3));
  CHECK(m(1) == doctest::Approx(0.7));
  CHECK(eye_level_average({a}) == a);
  CHECK(eye_level_average({a, a}) == a);
  CHECK_THROWS_AS(eye_level_average({}), ValidationError);
  CHECK_THROWS_AS(eye_level_average({a, vec({1, 2, 3})}), ShapeError);

  PredictionMatrix p;
  p.scores = Matrix(3, 2);
  p.scores << 0.2, 0.8, 0.9, 0.1, 0.4, 0.6;
  const auto g = average_by_group(p, {"p1/OD", "p1/OS", "p1/OD"});
  CHECK(g.ids == std::vector<std::string>{"p1/OD", "p1/OS"});
  CHECK(g.scores(0, 0) == doctest::Approx(0.3));
}
