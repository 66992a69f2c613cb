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

#include "retinavl/readerstudy/types.hpp"

#include "retinavl/core/error.hpp"

namespace retinavl::readerstudy {

using nlohmann::json;

std::string to_string(Tier t) {
  switch (t) {
    case Tier::trainee: return "trainee";
    case Tier::junior: return "junior";
    case Tier::senior: return "senior";
    case Tier::expert: return "expert";
  }
  return "?";
}

Tier parse_tier(const std::string& s) {
  for (Tier t : {Tier::trainee, Tier::junior, Tier::senior, Tier::expert})
    if (to_string(t) == s) return t;
  throw ValidationError("unknown tier '" + s + "'");
}

void AssistancePayload::validate() const {
  auto check = [](const Ranked& list, const char* what) {
    RVL_CHECK(list.size() == 5, ValidationError, std::string(what) + " must list exactly 5 entries");
    for (std::size_t i = 1; i < list.size(); ++i)
      RVL_CHECK(list[i].second <= list[i - 1].second, ValidationError, std::string(what) + " scores must not increase");
  };
  check(top5_diseases, "top5_diseases");
  check(top5_lesions, "top5_lesions");
  RVL_CHECK(!heatmap.empty(), ValidationError, "assistance heatmap missing");
}

int AssistancePayload::rank_of(const std::string& disease) const {
  for (std::size_t i = 0; i < top5_diseases.size(); ++i)
    if (top5_diseases[i].first == disease) return static_cast<int>(i) + 1;
  return 0;
}

std::string to_string(Behavior b) { return b == Behavior::modified ? "modified" : "maintained"; }

std::string to_string(Adoption a) {
  switch (a) {
    case Adoption::none: return "none";
    case Adoption::top1_adopt: return "top1_adopt";
    case Adoption::top2to5_adopt: return "top2to5_adopt";
    case Adoption::independent: return "independent";
  }
  return "?";
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::optimal_revision: return "optimal_revision";
    case Outcome::ineffective_correction: return "ineffective_correction";
    case Outcome::risk_inducing_revision: return "risk_inducing_revision";
    case Outcome::independent_success: return "independent_success";
    case Outcome::optimal_collaboration: return "optimal_collaboration";
    case Outcome::ineffective_validation: return "ineffective_validation";
    case Outcome::persistent_error: return "persistent_error";
    case Outcome::uncategorized: return "uncategorized";
  }
  return "?";
}

namespace {

json ranked_json(const Ranked& r) {
  json out = json::array();
  for (const auto& [name, score] : r) out.push_back({{"name", name}, {"score", score}});
  return out;
}

Ranked ranked_from(const json& j) {
  Ranked out;
  for (const auto& e : j) {
    if (e.is_array()) out.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
    else out.emplace_back(e.at("name").get<std::string>(), e.at("score").get<double>());
  }
  return out;
}

}  // namespace

void to_json(json& j, const AssistancePayload& p) {
  j = {{"top5_diseases", ranked_json(p.top5_diseases)},
       {"top5_lesions", ranked_json(p.top5_lesions)},
       {"heatmap", p.heatmap}};
}

void from_json(const json& j, AssistancePayload& p) {
  p.top5_diseases = ranked_from(j.at("top5_diseases"));
  p.top5_lesions = ranked_from(j.at("top5_lesions"));
  p.heatmap = j.at("heatmap").get<std::string>();
}

void to_json(json& j, const ReadingRecord& r) {
  j = {{"case", r.case_id}};
  if (r.stage1)
    j["stage1"] = {{"diagnosis", r.stage1->diagnosis}, {"confidence", r.stage1->confidence}, {"timestamp", r.stage1->timestamp}};
  if (r.stage2)
    j["stage2"] = {{"diagnosis", r.stage2->diagnosis},
                   {"confidence", r.stage2->confidence},
                   {"ratings",
                    {{"diseases", r.stage2->ratings.diseases},
                     {"lesions", r.stage2->ratings.lesions},
                     {"heatmap", r.stage2->ratings.heatmap}}},
                   {"timestamp", r.stage2->timestamp}};
}

}  // namespace retinavl::readerstudy
