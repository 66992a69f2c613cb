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

// Domain types of the two-stage assisted reading study.

#pragma once

#include "json.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace retinavl::readerstudy {

enum class Tier { trainee, junior, senior, expert };
std::string to_string(Tier t);
Tier parse_tier(const std::string& s);

struct Participant {
  std::string id;
  Tier tier = Tier::trainee;
  std::string institution;
  std::string token;  ///< opaque bearer token
};

using Ranked = std::vector<std::pair<std::string, double>>;

/// Precomputed assistance shown after the unaided read.
struct AssistancePayload {
  Ranked top5_diseases;
  Ranked top5_lesions;
  std::string heatmap;  ///< path of the overlay PNG

  /// Exactly five entries per list with non-increasing scores.
  void validate() const;
  /// Rank (1-based) of a disease among the suggestions, 0 when absent.
  int rank_of(const std::string& disease) const;
};

struct Case {
  std::string id;
  std::string image;
  std::string ground_truth;
  AssistancePayload assistance;
};

inline constexpr int kLikertMin = 1;
inline constexpr int kLikertMax = 5;

struct Stage1 {
  std::string diagnosis;
  int confidence = 0;
  std::int64_t timestamp = 0;
};

/// Usefulness of the three assistance components.
struct UtilityRatings {
  int diseases = 0;
  int lesions = 0;
  int heatmap = 0;
};

struct Stage2 {
  std::string diagnosis;
  int confidence = 0;
  UtilityRatings ratings;
  std::int64_t timestamp = 0;
};

struct ReadingRecord {
  std::string case_id;
  std::optional<Stage1> stage1;
  std::optional<Stage2> stage2;

  bool complete() const { return stage1 && stage2; }
};

struct Questionnaire {
  std::string participant_id;
  std::map<std::string, int> ratings;  ///< item -> 1..5
};

enum class Behavior { modified, maintained };
enum class Adoption { none, top1_adopt, top2to5_adopt, independent };
enum class Outcome {
  optimal_revision,
  ineffective_correction,
  risk_inducing_revision,
  independent_success,
  optimal_collaboration,
  ineffective_validation,
  persistent_error,
  /// Maintained wrong diagnosis where the AI top-1 is also wrong and different.
  uncategorized,
};
inline constexpr std::array<Outcome, 8> kOutcomes = {
    Outcome::optimal_revision,       Outcome::ineffective_correction, Outcome::risk_inducing_revision,
    Outcome::independent_success,    Outcome::optimal_collaboration,  Outcome::ineffective_validation,
    Outcome::persistent_error,       Outcome::uncategorized};

std::string to_string(Behavior b);
std::string to_string(Adoption a);
std::string to_string(Outcome o);

struct BehaviorOutcome {
  Behavior behavior = Behavior::maintained;
  Adoption adoption = Adoption::none;  ///< none unless modified
  Outcome outcome = Outcome::uncategorized;

  bool operator==(const BehaviorOutcome&) const = default;
};

void to_json(nlohmann::json& j, const AssistancePayload& p);
void from_json(const nlohmann::json& j, AssistancePayload& p);
void to_json(nlohmann::json& j, const ReadingRecord& r);

}  // namespace retinavl::readerstudy
