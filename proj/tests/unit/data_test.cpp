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
#include "retinavl/data/laterality.hpp"
#include "retinavl/data/preprocess.hpp"
#include "retinavl/data/records.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace retinavl;
using namespace retinavl::data;
namespace fs = std::filesystem;

namespace {

std::string header_line(const std::string& split = "train") {
  return R"({"format":"retinavl-manifest/1","split":")" + split +
         R"(","schema":{"classes":["normal","drusen","DR"],"mode":"multi_label","trim_rules":[]}})";
}

std::string record_line(const std::string& id, const std::string& extra = "") {
  return R"({"image_id":")" + id + R"(","image_path":")" + id +
         R"(.png","eye":"OD","report":{"findings":"Drusen.","impression":"AMD."})" + extra + "}";
}

ManifestOptions no_files() { return {false}; }

}  // namespace

TEST_CASE("empty manifest") {
  const auto m = parse_manifest_text("", ".", no_files());
  CHECK(m.records.empty());
}

TEST_CASE("duplicate ids are named in the error") {
  const std::string text = header_line() + "\n" + record_line("a") + "\n" + record_line("b") + "\n" +
                           record_line("c") + "\n" + record_line("b") + "\n";
  try {
    parse_manifest_text(text, ".", no_files());
    FAIL("expected an error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
}

TEST_CASE("malformed lines report their line number") {
  const std::string text = header_line() + "\n" + record_line("a") + "\n{not json\n";
  try {
    parse_manifest_text(text, ".", no_files());
    FAIL("expected an error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_manifest_text(header_line() + "\n" + record_line("a", R"(,"labels":["glaucoma"])"), ".", no_files()),
                  SchemaError);
}

TEST_CASE("split counts match a line count") {
  std::mt19937_64 rng(3);
  std::string text = header_line() + "\n";
  int expect[3] = {0, 0, 0};
  const char* names[3] = {"train", "val", "test"};
  for (int i = 0; i < 50; ++i) {
    const int s = static_cast<int>(rng() % 3);
    ++expect[s];
    text += record_line("r" + std::to_string(i), std::string(R"(,"split":")") + names[s] + "\"") + "\n";
  }
  const auto m = parse_manifest_text(text, ".", no_files());
  CHECK(m.records.size() == 50);
  CHECK(static_cast<int>(m.subset(Split::train).records.size()) == expect[0]);
  CHECK(static_cast<int>(m.subset(Split::val).records.size()) == expect[1]);
  CHECK(static_cast<int>(m.subset(Split::test).records.size()) == expect[2]);
}

TEST_CASE("manifest round trip") {
  DatasetManifest m;
  m.schema = {{"normal", "drusen", "DR1", "DR2"}, LabelMode::multi_label,
              {TrimRule::merge({"DR1", "DR2"}, "DR"), TrimRule::drop({"normal"})}};
  m.split = Split::val;
  ImageReportPair r;
  r.image_id = "x1";
  r.image_path = "img/x1.png";
  r.eye = Eye::OS;
  r.report = {"diabetes", "Drusen; \"quoted\" text", "Early AMD", Laterality::OS};
  r.age = 63.5;
  r.sex = Sex::male;
  r.labels = {"drusen", "DR1"};
  m.records.push_back(r);
  r.image_id = "x2";
  r.age.reset();
  r.sex = Sex::female;
  r.labels.clear();
  r.split = Split::test;
  m.records.push_back(r);
  const auto back = parse_manifest_text(serialize_manifest(m), ".", no_files());
  CHECK(back.records == m.records);
  CHECK(back.schema.classes == m.schema.classes);
  CHECK(back.schema.trim_rules.size() == 2);
  CHECK(back.schema.trim_rules[0].target == "DR");
  CHECK(back.split == Split::val);
  CHECK(serialize_manifest(back) == serialize_manifest(m));
  const auto labels = m.label_matrix();
  CHECK(labels(0, 1) == 1);
  CHECK(labels(0, 2) == 1);
  CHECK(labels.row(1).sum() == 0);
}

TEST_CASE("missing image files are rejected at load") {
  const fs::path dir = fs::temp_directory_path() / "rvl_manifest_test";
  fs::create_directories(dir);
  { std::ofstream(dir / "a.png") << "x"; }
  { std::ofstream(dir / "m.jsonl") << header_line() << "\n" << record_line("a") << "\n"; }
  CHECK(parse_manifest(dir / "m.jsonl").records.size() == 1);
  { std::ofstream(dir / "m.jsonl") << header_line() << "\n" << record_line("a") << "\n" << record_line("b") << "\n"; }
  CHECK_THROWS_AS(parse_manifest(dir / "m.jsonl"), ValidationError);
  fs::remove_all(dir);
}

TEST_CASE("laterality examples") {
  const KeywordTable k = KeywordTable::defaults();
  auto s = segment_report_by_eye("Right eye: drusen. Left eye: normal fundus.", "", k);
  CHECK(s.od.findings == std::vector<std::string>{"drusen"});
  CHECK(s.os.findings == std::vector<std::string>{"normal fundus"});
  CHECK_FALSE(s.bilateral_default);

  s = segment_report_by_eye("Tessellated fundus.", "", k);
  CHECK(s.bilateral_default);
  CHECK(s.od.findings == std::vector<std::string>{"Tessellated fundus."});
  CHECK(s.os.findings == std::vector<std::string>{"Tessellated fundus."});

  CHECK_THROWS_AS(segment_report_by_eye("  ", "x", k), UnusableRecordError);
}

TEST_CASE("keyword table file matches the defaults") {
  const KeywordTable file = KeywordTable::load(fs::path(RVL_CONFIG_DIR) / "laterality_keywords.tsv");
  const KeywordTable def = KeywordTable::defaults();
  REQUIRE(file.keywords.size() == def.keywords.size());
  for (std::size_t i = 0; i < def.keywords.size(); ++i) {
    CHECK(file.keywords[i].phrase == def.keywords[i].phrase);
    CHECK(file.keywords[i].laterality == def.keywords[i].laterality);
  }
}

TEST_CASE("hand-labeled mixed-laterality reports") {
  // findings, impression, expected OD findings, expected OS findings (joined with '|').
  struct Row {
    const char *findings, *impression, *od, *os;
  };
  const Row rows[] = {
      {"Right eye: drusen. Left eye: normal fundus.", "", "drusen", "normal fundus"},
      {"OD: cup-disc ratio 0.6. OS: cup-disc ratio 0.3.", "", "cup-disc ratio 0.6", "cup-disc ratio 0.3"},
      {"Both eyes: tessellated fundus.", "", "tessellated fundus", "tessellated fundus"},
      {"Tessellated fundus; clear media.", "", "Tessellated fundus; clear media.", "Tessellated fundus; clear media."},
      {"Drusen in the right eye. Hard exudates nasal to the disc.", "", "Drusen in the right eye|Hard exudates nasal to the disc", ""},
      {"Clear media. Left eye shows a macular hole.", "", "Clear media", "Clear media|Left eye shows a macular hole"},
      {"Right eye: normal. Left eye: haemorrhages; cotton wool spots.", "", "normal", "haemorrhages|cotton wool spots"},
      {"Binocular tessellation. Right eye: drusen.", "", "Binocular tessellation|drusen", "Binocular tessellation"},
      {"The left eye and right eye both show drusen.", "", "The left eye and right eye both show drusen", "The left eye and right eye both show drusen"},
      {"RIGHT EYE: laser scars.", "", "laser scars", ""},
      {"Left eye: optic disc pallor! Right eye: normal?", "", "normal", "optic disc pallor"},
      {"OD normal. OS normal.", "", "OD normal", "OS normal"},
      {"Cosmos pattern. Odd reflex.", "", "Cosmos pattern. Odd reflex.", "Cosmos pattern. Odd reflex."},
      {"od: lowercase label is not an abbreviation match.", "", "od: lowercase label is not an abbreviation match.", "od: lowercase label is not an abbreviation match."},
      {"Right eye: CDR 0.7. Left eye: CDR 0.4.", "", "CDR 0.7", "CDR 0.4"},
      {"Right eye: drusen.", "Left eye: dry AMD.", "drusen", ""},
      {"Left eye: epiretinal membrane.", "", "", "epiretinal membrane"},
      {"Right-eye-only change: none.", "", "Right-eye-only change: none.", "Right-eye-only change: none."},
      {"Both eyes: myopic fundus. Left eye: peripapillary atrophy.", "", "myopic fundus", "myopic fundus|peripapillary atrophy"},
      {"Fundus normal; right eye: drusen; vessels normal.", "", "Fundus normal|drusen|vessels normal", "Fundus normal"},
  };
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : "|") + x;
    return s;
  };
  const KeywordTable k = KeywordTable::defaults();
  for (const Row& r : rows) {
    CAPTURE(r.findings);
    const auto s = segment_report_by_eye(r.findings, r.impression, k);
    CHECK(join(s.od.findings) == r.od);
    CHECK(join(s.os.findings) == r.os);
    // Every sentence reaches at least one eye.
    CHECK(split_sentences(r.findings).size() <= s.od.findings.size() + s.os.findings.size() + (s.bilateral_default ? 99 : 0));
  }
  const auto s = segment_report_by_eye("Right eye: drusen.", "Left eye: dry AMD.", k);
  CHECK(s.os.impression == std::vector<std::string>{"dry AMD"});
  CHECK(s.od.impression.empty());
  CHECK(s.od.findings_text() == "drusen.");
}

namespace {

Image disk_image(int h, int w, int cy, int cx, int r) {
  Image img(3, h, w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
        img[0](y, x) = 0.8;
        img[1](y, x) = 0.4;
        img[2](y, x) = 0.2;
      }
  return img;
}

}  // namespace

TEST_CASE("preprocess identity on a full square fundus") {
  Image img = disk_image(40, 40, 20, 20, 25);  // disk covers every border row and column
  img[0](0, 0) = 0.5;
  const Image out = preprocess_image(img, Modality::CFP, 40);
  CHECK(out == img);
}

TEST_CASE("crop box equals the brute-force foreground box") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const int h = 30 + static_cast<int>(rng() % 20), w = 30 + static_cast<int>(rng() % 20);
    const int r = 5 + static_cast<int>(rng() % 8);
    const int cy = r + static_cast<int>(rng() % static_cast<unsigned>(h - 2 * r));
    const int cx = r + static_cast<int>(rng() % static_cast<unsigned>(w - 2 * r));
    const Image img = disk_image(h, w, cy, cx, r);
    int top = h, left = w, bottom = -1, right = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (std::max({img[0](y, x), img[1](y, x), img[2](y, x)}) > 10.0 / 255.0) {
          top = std::min(top, y);
          left = std::min(left, x);
          bottom = std::max(bottom, y);
          right = std::max(right, x);
        }
    CHECK(foreground_box(img) == Box{top, left, bottom - top + 1, right - left + 1});
  }
}

TEST_CASE("FFA is padded square without distortion") {
  Image img(1, 300, 400, 0.5);
  const Image out = preprocess_image(img, Modality::FFA, 400);
  REQUIRE(out.height() == 400);
  REQUIRE(out.width() == 400);
  // Content occupies rows 50..349; the padded bands are black.
  CHECK(out[0](0, 200) == 0.0);
  CHECK(out[0](399, 200) == 0.0);
  CHECK(out[0](200, 0) == 0.5);
  CHECK(out[0](50, 200) == 0.5);
  CHECK(out[0](49, 200) == 0.0);
  const Image small = preprocess_image(img, Modality::UWF, 100);
  CHECK(small.height() == 100);
  CHECK(std::abs(foreground_box(small)->height - 75) <= 1);
  CHECK(foreground_box(small)->width == 100);
}

TEST_CASE("an external crop provider overrides the threshold box") {
  const Image img = disk_image(40, 40, 20, 20, 10);
  PreprocessOptions o;
  o.crop_provider = [](const Image&) { return std::optional<Box>(Box{0, 0, 40, 40}); };
  const Image out = preprocess_image(img, Modality::CFP, 40, o);
  CHECK(out == img);
  CHECK_FALSE(preprocess_image(img, Modality::CFP, 40) == img);
  CHECK_THROWS_AS(preprocess_image(Image(3, 10, 10, 0.0), Modality::CFP, 8), UnusableRecordError);
  CHECK_THROWS_AS(preprocess_image(Image(3, 10, 10, 10.0 / 255.0), Modality::UWF, 8), UnusableRecordError);
}

TEST_CASE("augmentation contracts") {
  std::mt19937_64 g(1);
  const Image img = disk_image(32, 32, 16, 16, 14);
  std::mt19937_64 rng(5);
  CHECK(augment(img, AugmentationPolicy{}, rng) == img);

  AugmentationPolicy flip;
  flip.hflip_prob = 1.0;
  CHECK(augment(augment(img, flip, rng), flip, rng) == img);

  const AugmentationPolicy standard = AugmentationPolicy::standard();
  std::mt19937_64 a(9), b(9);
  CHECK(augment(img, standard, a) == augment(img, standard, b));

  AugmentationPolicy cut;
  cut.cutout_fraction = 0.1;
  const Image ones(1, 30, 40, 1.0);
  const Image out = augment(ones, cut, rng);
  const auto [eh, ew] = cutout_extent(30, 40, 0.1);
  CHECK(eh == 9);
  CHECK(ew == 13);
  CHECK((out[0] == 0.0).count() == eh * ew);

  AugmentationPolicy bad;
  bad.hflip_prob = 2;
  CHECK_THROWS_AS(augment(img, bad, rng), ConfigError);
}
