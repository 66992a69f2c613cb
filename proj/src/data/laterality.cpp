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

#include "retinavl/data/laterality.hpp"

#include "retinavl/core/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace retinavl::data {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool is_upper_abbreviation(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](unsigned char c) { return std::isalpha(c); }) &&
         std::none_of(s.begin(), s.end(), [](unsigned char c) { return std::islower(c); });
}

bool word_byte(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Position of the first whole-word occurrence of `phrase`, or npos.
std::size_t find_word(const std::string& text, const LateralityKeyword& k) {
  const bool exact = is_upper_abbreviation(k.phrase);
  const std::string hay = exact ? text : lower(text);
  const std::string needle = exact ? k.phrase : lower(k.phrase);
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    const bool left_ok = pos == 0 || !word_byte(hay[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end >= hay.size() || !word_byte(hay[end]);
    if (left_ok && right_ok) return pos;
  }
  return std::string::npos;
}

struct Match {
  bool od = false;
  bool os = false;
  bool any() const { return od || os; }
};

Match classify(const std::string& sentence, const KeywordTable& table) {
  Match m;
  for (const auto& k : table.keywords) {
    if (find_word(sentence, k) == std::string::npos) continue;
    m.od = m.od || k.laterality != Laterality::OS;
    m.os = m.os || k.laterality != Laterality::OD;
  }
  return m;
}

// "Right eye: drusen" -> "drusen" when the text before the colon is exactly a keyword.
std::string strip_label(const std::string& sentence, const KeywordTable& table) {
  const auto colon = sentence.find(':');
  if (colon == std::string::npos) return sentence;
  const std::string head = trim(sentence.substr(0, colon));
  for (const auto& k : table.keywords) {
    const bool exact = is_upper_abbreviation(k.phrase);
    if ((exact && head == k.phrase) || (!exact && lower(head) == lower(k.phrase)))
      return trim(sentence.substr(colon + 1));
  }
  return sentence;
}

void assign(const std::string& section, const KeywordTable& table, std::vector<std::string>& od,
            std::vector<std::string>& os) {
  Match current{true, true};
  for (const auto& sentence : split_sentences(section)) {
    const Match m = classify(sentence, table);
    if (m.any()) current = m;
    const std::string text = strip_label(sentence, table);
    if (text.empty()) continue;
    if (current.od) od.push_back(text);
    if (current.os) os.push_back(text);
  }
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += ' ';
    out += p;
    if (!p.empty() && std::string(".!?;").find(p.back()) == std::string::npos) out += '.';
  }
  return out;
}

}  // namespace

KeywordTable KeywordTable::defaults() {
  return {{{"right eye", Laterality::OD},
           {"OD", Laterality::OD},
           {"left eye", Laterality::OS},
           {"OS", Laterality::OS},
           {"both eyes", Laterality::BOTH},
           {"binocular", Laterality::BOTH}}};
}

KeywordTable KeywordTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keyword table " + path.string());
  KeywordTable t;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || trim(line)[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("keyword table: expected phrase<TAB>laterality", line_no);
    const std::string phrase = trim(line.substr(0, tab));
    if (phrase.empty()) throw ParseError("keyword table: empty phrase", line_no);
    try {
      t.keywords.push_back({phrase, parse_laterality(trim(line.substr(tab + 1)))});
    } catch (const SchemaError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return t;
}

std::string EyeParts::findings_text() const { return join(findings); }
std::string EyeParts::impression_text() const { return join(impression); }

std::vector<std::string> split_sentences(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    // A period between digits is a decimal point ("C/D 0.6"), not a sentence end.
    const bool decimal = c == '.' && i > 0 && i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
                         std::isdigit(static_cast<unsigned char>(text[i + 1]));
    if (!decimal && (c == '.' || c == '!' || c == '?' || c == ';')) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

EyeSegmentation segment_report_by_eye(const std::string& findings, const std::string& impression,
                                      const KeywordTable& table) {
  RVL_CHECK(!trim(findings).empty(), UnusableRecordError, "report has empty findings");
  EyeSegmentation seg;
  bool any_keyword = false;
  for (const std::string* section : {&findings, &impression})
    for (const auto& s : split_sentences(*section)) any_keyword = any_keyword || classify(s, table).any();
  if (!any_keyword) {
    seg.bilateral_default = true;
    for (EyeParts* eye : {&seg.od, &seg.os}) {
      eye->findings.push_back(trim(findings));
      if (!trim(impression).empty()) eye->impression.push_back(trim(impression));
    }
    return seg;
  }
  assign(findings, table, seg.od.findings, seg.os.findings);
  assign(impression, table, seg.od.impression, seg.os.impression);
  return seg;
}

}  // namespace retinavl::data
