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

// A constructed reader study: ten participants read the same 100 cases, with
// reading outcomes planted so that exactly 584 unaided and 732 final reads of
// the 1000 are correct.

#pragma once

#include "retinavl/readerstudy/study.hpp"

#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace reader_fixture {

using namespace retinavl::readerstudy;

inline std::vector<std::string> classes() {
  std::vector<std::string> c;
  for (int i = 0; i < 21; ++i) c.push_back("condition-" + std::to_string(i));
  return c;
}

/// `cases` cases; every fifth case has a wrong AI top-1 with the truth at rank 2.
inline StudyConfig config(int cases = 100, int participants = 10) {
  StudyConfig cfg;
  cfg.classes = classes();
  for (int i = 0; i < cases; ++i) {
    Case c;
    c.id = "case-" + std::to_string(i);
    c.image = "images/" + c.id + ".png";
    c.ground_truth = cfg.classes[static_cast<std::size_t>(i % 21)];
    const bool ai_wrong = i % 5 == 4;
    std::vector<std::string> ranked;
    if (ai_wrong) ranked.push_back(cfg.classes[static_cast<std::size_t>((i + 1) % 21)]);
    ranked.push_back(c.ground_truth);
    for (int k = 2; ranked.size() < 5; ++k) ranked.push_back(cfg.classes[static_cast<std::size_t>((i + k) % 21)]);
    for (std::size_t r = 0; r < 5; ++r) {
      c.assistance.top5_diseases.emplace_back(ranked[r], 0.9 - 0.1 * static_cast<double>(r));
      c.assistance.top5_lesions.emplace_back("lesion-" + std::to_string(r), 0.8 - 0.1 * static_cast<double>(r));
    }
    c.assistance.heatmap = "heatmaps/" + c.id + ".png";
    cfg.cases.push_back(c);
  }
  const Tier tiers[] = {Tier::trainee, Tier::trainee, Tier::trainee, Tier::junior, Tier::junior,
                        Tier::junior,  Tier::senior,  Tier::senior,  Tier::expert, Tier::expert};
  for (int p = 0; p < participants; ++p)
    cfg.participants.push_back({"reader-" + std::to_string(p), tiers[p % 10], "site-" + std::to_string(p % 3),
                                "token-" + std::to_string(p)});
  cfg.admin_token = "admin-secret";
  return cfg;
}

enum class Pattern { right_right, wrong_right, right_wrong, wrong_wrong };

/// 564 right/right, 168 wrong/right, 20 right/wrong, 248 wrong/wrong, shuffled.
inline std::vector<Pattern> patterns(std::uint64_t seed) {
  std::vector<Pattern> p;
  p.insert(p.end(), 564, Pattern::right_right);
  p.insert(p.end(), 168, Pattern::wrong_right);
  p.insert(p.end(), 20, Pattern::right_wrong);
  p.insert(p.end(), 248, Pattern::wrong_wrong);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

/// Runs every participant through the full protocol.
inline void run(Study& study, std::uint64_t seed = 7, bool all_correct = false) {
  const auto& cfg = study.config();
  const auto plan = patterns(seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_int_distribution<int> likert(1, 5);
  std::size_t k = 0;
  for (std::size_t p = 0; p < cfg.participants.size(); ++p) {
    const std::string sid = study.create_session(cfg.participants[p].id, 100 + p);
    const Session s = study.session(sid);
    for (const auto& cid : s.order) {
      const Case& c = cfg.case_by_id(cid);
      const Pattern pat = all_correct ? Pattern::right_right : plan[k % plan.size()];
      ++k;
      const std::string& truth = c.ground_truth;
      const std::string& top1 = c.assistance.top5_diseases.front().first;
      auto other = [&](const std::string& avoid) {
        for (const auto& name : cfg.classes)
          if (name != truth && name != avoid) return name;
        return truth;
      };
      std::string prelim = truth, final_dx = truth;
      switch (pat) {
        case Pattern::right_right: break;
        case Pattern::wrong_right: prelim = top1 != truth ? top1 : other(""); break;
        case Pattern::right_wrong: final_dx = top1 != truth ? top1 : other(""); break;
        case Pattern::wrong_wrong:
          prelim = other("");
          final_dx = k % 3 == 0 ? other(prelim) : prelim;
          break;
      }
      study.submit_stage1(sid, cid, prelim, likert(rng));
      study.get_assistance(sid, cid);
      study.submit_stage2(sid, cid, final_dx, likert(rng), {likert(rng), likert(rng), likert(rng)});
    }
    std::map<std::string, int> q;
    for (const auto& item : cfg.questionnaire_items) q[item] = likert(rng);
    study.submit_questionnaire(sid, q);
  }
}

}  // namespace reader_fixture
