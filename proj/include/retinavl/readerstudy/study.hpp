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

// Session protocol, append-only event log and study analysis.
//
// Every committed step is validated against the protocol (unaided read, then
// assistance, then final read; nothing committed is ever changed) and appended
// to the event log before it becomes visible. Replaying the log through the
// same checks rebuilds the study state.

#pragma once

#include "retinavl/core/error.hpp"
#include "retinavl/metrics/stats.hpp"
#include "retinavl/readerstudy/types.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

namespace retinavl::readerstudy {

struct StudyConfig {
  std::vector<std::string> classes;
  std::vector<Case> cases;
  std::vector<Participant> participants;
  std::string admin_token;
  std::vector<std::string> questionnaire_items{"willingness", "value", "trust", "workflow"};

  /// JSON: {"classes", "cases": [{id, image, ground_truth, assistance}], "participants":
  /// [{id, tier, institution, token}], "admin_token", "questionnaire_items"}.
  static StudyConfig load(const std::filesystem::path& path);
  static StudyConfig from_json(const nlohmann::json& j);
  /// Inverse of from_json.
  nlohmann::json to_json() const;
  void validate() const;
  const Case& case_by_id(const std::string& id) const;
  const Participant& participant(const std::string& id) const;
  bool has_class(const std::string& c) const;
};

enum class Violation {
  out_of_order,        ///< not the session's current case
  already_committed,   ///< the stage was committed before (retroactive edit)
  assistance_locked,   ///< assistance requested before the unaided read
  stage1_missing,      ///< final read before the unaided read
  session_complete,
  duplicate_session,   ///< participant already has an active session
  questionnaire_locked,
};
std::string to_string(Violation v);

class ProtocolViolation : public ProtocolError {
 public:
  ProtocolViolation(Violation v, const std::string& what) : ProtocolError(what), violation_(v) {}
  Violation violation() const { return violation_; }

 private:
  Violation violation_;
};

struct Session {
  std::string id;
  std::string participant_id;
  std::uint64_t order_seed = 0;
  std::vector<std::string> order;
  std::size_t cursor = 0;
  std::map<std::string, ReadingRecord> records;

  bool complete() const { return cursor == order.size(); }
  /// Case at the cursor; empty when complete.
  std::string current_case() const { return complete() ? std::string() : order[cursor]; }
};

using Clock = std::function<std::int64_t()>;
/// Milliseconds since the epoch.
std::int64_t system_clock_ms();

class Study {
 public:
  explicit Study(StudyConfig config, Clock clock = system_clock_ms);

  /// Appends every later event to `path` (created if needed).
  void open_log(const std::filesystem::path& path);

  const StudyConfig& config() const { return config_; }

  /// Seeded shuffle of all cases; one active session per participant.
  std::string create_session(const std::string& participant_id, std::uint64_t order_seed);
  void submit_stage1(const std::string& session_id, const std::string& case_id, const std::string& diagnosis,
                     int confidence);
  AssistancePayload get_assistance(const std::string& session_id, const std::string& case_id) const;
  void submit_stage2(const std::string& session_id, const std::string& case_id, const std::string& diagnosis,
                     int confidence, const UtilityRatings& ratings);
  /// Accepted once per participant, after their session is complete.
  void submit_questionnaire(const std::string& session_id, const std::map<std::string, int>& ratings);

  Session session(const std::string& id) const;
  std::vector<Session> sessions() const;
  std::vector<Questionnaire> questionnaires() const;
  /// Participant holding `token`, or nullptr.
  const Participant* participant_for_token(const std::string& token) const;

  /// Rebuilds a study by re-applying every event of `log` through the protocol checks.
  static std::unique_ptr<Study> replay(StudyConfig config, const std::filesystem::path& log);

 private:
  Session& find_session(const std::string& id);
  const Session& find_session(const std::string& id) const;
  void append(nlohmann::json event);
  void apply(const nlohmann::json& event);

  StudyConfig config_;
  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, Questionnaire> questionnaires_;
  std::ofstream log_;
  long next_event_ = 0;
};

struct ClassifyOptions {
  /// Count a maintained wrong read as persistent error when the truth was anywhere in the top 5.
  bool corrective_top5 = false;
};

/// Behavior, adoption and outcome of one complete reading.
BehaviorOutcome classify_behavior(const ReadingRecord& record, const AssistancePayload& payload,
                                  const std::string& ground_truth, const ClassifyOptions& options = {});

struct AccuracyRow {
  std::string group;  ///< "overall" or a tier
  long n = 0;
  double pre = 0;
  double post = 0;
  metrics::StatReport pre_ci;
  metrics::StatReport post_ci;
  metrics::McNemarResult mcnemar;
};

struct StudyReport {
  long readings = 0;
  std::vector<AccuracyRow> accuracy;
  double modification_rate = 0;
  long conflict_readings = 0;  ///< AI top-1 differs from the unaided diagnosis
  double modification_rate_conflict = 0;
  double modification_rate_agree = 0;
  std::map<std::string, long> outcomes;
  std::map<std::string, long> adoption;
  /// "agree" / "conflict" -> confidence change -> count.
  std::map<std::string, std::map<int, long>> confidence_delta;
  std::map<std::string, double> mean_confidence_delta;
  std::map<std::string, double> utility_means;
  /// tier -> item -> mean rating.
  std::map<std::string, std::map<std::string, double>> questionnaire_means;

  nlohmann::json to_json() const;
};

struct AggregateOptions {
  ClassifyOptions classify;
  /// Judge AI conflict against the whole top 5 instead of the top 1.
  bool conflict_top5 = false;
  int bootstrap_resamples = 2000;
  std::uint64_t seed = 0;
};

/// Requires every session to be complete; the result does not depend on session order.
StudyReport aggregate_results(const std::vector<Session>& sessions, const StudyConfig& config,
                              const std::vector<Questionnaire>& questionnaires = {},
                              const AggregateOptions& options = {});

}  // namespace retinavl::readerstudy
