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

// Splits bilateral reports into per-eye parts by laterality keywords.

#pragma once

#include "retinavl/data/records.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace retinavl::data {

struct LateralityKeyword {
  std::string phrase;
  Laterality laterality = Laterality::BOTH;
};

/// Keywords are matched as whole words. All-uppercase phrases (abbreviations such as "OD")
/// match case-sensitively; other phrases ignore case.
struct KeywordTable {
  std::vector<LateralityKeyword> keywords;

  static KeywordTable defaults();
  /// Tab-separated "phrase<TAB>OD|OS|BOTH" lines; '#' starts a comment line.
  static KeywordTable load(const std::filesystem::path& path);
};

struct EyeParts {
  std::vector<std::string> findings;
  std::vector<std::string> impression;

  /// Sentences joined back into report text.
  std::string findings_text() const;
  std::string impression_text() const;
};

struct EyeSegmentation {
  EyeParts od;
  EyeParts os;
  /// True when no keyword occurred anywhere and the whole text went to both eyes.
  bool bilateral_default = false;
};

/// Sentences split on . ! ? and ; (trimmed, terminators removed).
std::vector<std::string> split_sentences(const std::string& text);

/// Assigns each sentence to OD, OS or both. A sentence takes the laterality of the keywords it
/// contains (both when it names both eyes) and a leading "keyword:" label is stripped; a sentence
/// without keywords inherits the previous sentence's laterality within its section, or both eyes
/// before any keyword. When no keyword occurs in either section, each eye receives the full
/// trimmed texts unchanged. Empty findings throw UnusableRecordError.
EyeSegmentation segment_report_by_eye(const std::string& findings, const std::string& impression,
                                      const KeywordTable& table);

}  // namespace retinavl::data
