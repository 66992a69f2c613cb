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

#include "retinavl/readerstudy/study.hpp"

#include <algorithm>
#include <chrono>
#include <mutex>
#include <numeric>
#include <random>
#include <set>

namespace retinavl::readerstudy {

using nlohmann::json;

StudyConfig StudyConfig::from_json(const json& j) {
  StudyConfig c;
  try {
    c.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& e : j.at("cases"))
      c.cases.push_back({e.at("id").get<std::string>(), e.value("image", std::string()),
                         e.at("ground_truth").get<std::string>(), e.at("assistance").get<AssistancePayload>()});
    for (const auto& e : j.at("participants"))
      c.participants.push_back({e.at("id").get<std::string>(), parse_tier(e.at("tier").get<std::string>()),
                                e.value("institution", std::string()), e.at("token").get<std::string>()});
    c.admin_token = j.at("admin_token").get<std::string>();
    if (j.contains("questionnaire_items")) c.questionnaire_items = j["questionnaire_items"].get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("study config: ") + e.what());
  }
  c.validate();
  return c;
}

json StudyConfig::to_json() const {
  json cases = json::array();
  for (const auto& c : this->cases)
    cases.push_back({{"id", c.id}, {"image", c.image}, {"ground_truth", c.ground_truth}, {"assistance", c.assistance}});
  json people = json::array();
  for (const auto& p : participants)
    people.push_back({{"id", p.id}, {"tier", readerstudy::to_string(p.tier)}, {"institution", p.institution},
                      {"token", p.token}});
  return {{"classes", classes},
          {"cases", cases},
          {"participants", people},
          {"admin_token", admin_token},
          {"questionnaire_items", questionnaire_items}};
}

StudyConfig StudyConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open study config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("study config: ") + e.what());
  }
}

void StudyConfig::validate() const {
  RVL_CHECK(!classes.empty(), ConfigError, "study has no classes");
  RVL_CHECK(!cases.empty(), ConfigError, "study has no cases");
  RVL_CHECK(!admin_token.empty(), ConfigError, "admin_token is required");
  std::set<std::string> ids, tokens{admin_token};
  for (const auto& c : cases) {
    RVL_CHECK(ids.insert(c.id).second, ConfigError, "duplicate case id " + c.id);
    RVL_CHECK(has_class(c.ground_truth), ConfigError, "case " + c.id + ": ground truth not in the class list");
    try {
      c.assistance.validate();
    } catch (const ValidationError& e) {
      throw ConfigError("case " + c.id + ": " + e.what());
    }
  }
  std::set<std::string> pids;
  for (const auto& p : participants) {
    RVL_CHECK(pids.insert(p.id).second, ConfigError, "duplicate participant id " + p.id);
    RVL_CHECK(!p.token.empty() && tokens.insert(p.token).second, ConfigError, "participant tokens must be unique and non-empty");
  }
}

const Case& StudyConfig::case_by_id(const std::string& id) const {
  for (const auto& c : cases)
    if (c.id == id) return c;
  throw ValidationError("unknown case " + id);
}

const Participant& StudyConfig::participant(const std::string& id) const {
  for (const auto& p : participants)
    if (p.id == id) return p;
  throw ValidationError("unknown participant " + id);
}

bool StudyConfig::has_class(const std::string& c) const {
  return std::find(classes.begin(), classes.end(), c) != classes.end();
}

std::string to_string(Violation v) {
  switch (v) {
    case Violation::out_of_order: return "out_of_order";
    case Violation::already_committed: return "already_committed";
    case Violation::assistance_locked: return "assistance_locked";
    case Violation::stage1_missing: return "stage1_missing";
    case Violation::session_complete: return "session_complete";
    case Violation::duplicate_session: return "duplicate_session";
    case Violation::questionnaire_locked: return "questionnaire_locked";
  }
  return "?";
}

std::int64_t system_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Study::Study(StudyConfig config, Clock clock) : config_(std::move(config)), clock_(std::move(clock)) {
  config_.validate();
}

void Study::open_log(const std::filesystem::path& path) {
  std::unique_lock lock(mutex_);
  log_.open(path, std::ios::app);
  if (!log_) throw IoError("cannot open event log " + path.string());
}

void Study::append(json event) {
  event["seq"] = next_event_++;
  if (log_.is_open()) {
    log_ << event.dump() << '\n';
    log_.flush();
    if (!log_) throw IoError("event log write failed");
  }
}

Session& Study::find_session(const std::string& id) {
  const auto it = sessions_.find(id);
  RVL_CHECK(it != sessions_.end(), ValidationError, "unknown session " + id);
  return it->second;
}

const Session& Study::find_session(const std::string& id) const {
  const auto it = sessions_.find(id);
  RVL_CHECK(it != sessions_.end(), ValidationError, "unknown session " + id);
  return it->second;
}

namespace {

void check_likert(int v, const std::string& field) {
  RVL_CHECK(v >= kLikertMin && v <= kLikertMax, ValidationError,
            field + " must be between 1 and 5 (all assessment fields are mandatory)");
}

// Protocol checks shared by both stages: known case at the cursor.
void check_position(const Session& s, const std::string& case_id, bool stage1) {
  const auto it = s.records.find(case_id);
  if (it != s.records.end()) {
    if (stage1 && it->second.stage1)
      throw ProtocolViolation(Violation::already_committed, "stage 1 of case " + case_id + " is already committed");
    if (!stage1 && it->second.stage2)
      throw ProtocolViolation(Violation::already_committed, "stage 2 of case " + case_id + " is already committed");
  }
  if (s.complete()) throw ProtocolViolation(Violation::session_complete, "session is complete");
  if (std::find(s.order.begin(), s.order.end(), case_id) == s.order.end())
    throw ValidationError("case " + case_id + " is not part of this session");
  if (s.current_case() != case_id)
    throw ProtocolViolation(Violation::out_of_order, "case " + case_id + " is not the current case (" +
                                                         s.current_case() + ")");
}

}  // namespace

void Study::apply(const json& e) {
  const std::string type = e.at("type").get<std::string>();
  const std::int64_t ts = e.at("ts").get<std::int64_t>();
  if (type == "session_created") {
    const std::string pid = e.at("participant").get<std::string>();
    config_.participant(pid);
    for (const auto& [id, s] : sessions_)
      if (s.participant_id == pid && !s.complete())
        throw ProtocolViolation(Violation::duplicate_session, "participant " + pid + " already has an active session");
    Session s;
    s.id = "session-" + std::to_string(sessions_.size() + 1);
    RVL_CHECK(!e.contains("session") || e["session"].get<std::string>() == s.id, ValidationError,
              "event log session id mismatch");
    s.participant_id = pid;
    s.order_seed = e.at("order_seed").get<std::uint64_t>();
    for (const auto& c : config_.cases) s.order.push_back(c.id);
    std::mt19937_64 rng(s.order_seed);
    std::shuffle(s.order.begin(), s.order.end(), rng);
    json logged = e;
    logged["session"] = s.id;
    sessions_.emplace(s.id, std::move(s));
    append(logged);
    return;
  }
  Session& s = find_session(e.at("session").get<std::string>());
  if (type == "stage1" || type == "stage2") {
    const std::string cid = e.at("case").get<std::string>();
    const std::string diagnosis = e.at("diagnosis").get<std::string>();
    const int confidence = e.at("confidence").get<int>();
    const bool first = type == "stage1";
    if (!first) {
      const auto it = s.records.find(cid);
      if (it == s.records.end() || !it->second.stage1)
        throw ProtocolViolation(Violation::stage1_missing, "stage 1 of case " + cid + " has not been committed");
    }
    check_position(s, cid, first);
    RVL_CHECK(config_.has_class(diagnosis), ValidationError, "diagnosis '" + diagnosis + "' is not a study class");
    check_likert(confidence, "confidence");
    if (first) {
      ReadingRecord& r = s.records[cid];
      r.case_id = cid;
      r.stage1 = Stage1{diagnosis, confidence, ts};
    } else {
      const json& rj = e.at("ratings");
      UtilityRatings ratings{rj.value("diseases", 0), rj.value("lesions", 0), rj.value("heatmap", 0)};
      check_likert(ratings.diseases, "disease suggestion rating");
      check_likert(ratings.lesions, "lesion suggestion rating");
      check_likert(ratings.heatmap, "heatmap rating");
      s.records[cid].stage2 = Stage2{diagnosis, confidence, ratings, ts};
      ++s.cursor;
    }
    append(e);
    return;
  }
  if (type == "questionnaire") {
    if (!s.complete())
      throw ProtocolViolation(Violation::questionnaire_locked, "questionnaire opens after the last case");
    if (questionnaires_.count(s.participant_id))
      throw ProtocolViolation(Violation::already_committed, "questionnaire already submitted");
    Questionnaire q{s.participant_id, e.at("ratings").get<std::map<std::string, int>>()};
    for (const auto& item : config_.questionnaire_items) {
      const auto it = q.ratings.find(item);
      RVL_CHECK(it != q.ratings.end(), ValidationError, "questionnaire item '" + item + "' is mandatory");
      check_likert(it->second, "questionnaire item '" + item + "'");
    }
    RVL_CHECK(q.ratings.size() == config_.questionnaire_items.size(), ValidationError, "unknown questionnaire item");
    questionnaires_.emplace(s.participant_id, std::move(q));
    append(e);
    return;
  }
  throw ParseError("unknown event type '" + type + "'");
}

std::string Study::create_session(const std::string& participant_id, std::uint64_t order_seed) {
  std::unique_lock lock(mutex_);
  apply({{"type", "session_created"}, {"participant", participant_id}, {"order_seed", order_seed}, {"ts", clock_()}});
  return "session-" + std::to_string(sessions_.size());
}

void Study::submit_stage1(const std::string& session_id, const std::string& case_id, const std::string& diagnosis,
                          int confidence) {
  std::unique_lock lock(mutex_);
  apply({{"type", "stage1"}, {"session", session_id}, {"case", case_id}, {"diagnosis", diagnosis},
         {"confidence", confidence}, {"ts", clock_()}});
}

AssistancePayload Study::get_assistance(const std::string& session_id, const std::string& case_id) const {
  std::shared_lock lock(mutex_);
  const Session& s = find_session(session_id);
  const auto it = s.records.find(case_id);
  if (it == s.records.end() || !it->second.stage1)
    throw ProtocolViolation(Violation::assistance_locked, "assistance for case " + case_id + " opens after stage 1");
  return config_.case_by_id(case_id).assistance;
}

void Study::submit_stage2(const std::string& session_id, const std::string& case_id, const std::string& diagnosis,
                          int confidence, const UtilityRatings& ratings) {
  std::unique_lock lock(mutex_);
  apply({{"type", "stage2"},
         {"session", session_id},
         {"case", case_id},
         {"diagnosis", diagnosis},
         {"confidence", confidence},
         {"ratings", {{"diseases", ratings.diseases}, {"lesions", ratings.lesions}, {"heatmap", ratings.heatmap}}},
         {"ts", clock_()}});
}

void Study::submit_questionnaire(const std::string& session_id, const std::map<std::string, int>& ratings) {
  std::unique_lock lock(mutex_);
  apply({{"type", "questionnaire"}, {"session", session_id}, {"ratings", ratings}, {"ts", clock_()}});
}

Session Study::session(const std::string& id) const {
  std::shared_lock lock(mutex_);
  return find_session(id);
}

std::vector<Session> Study::sessions() const {
  std::shared_lock lock(mutex_);
  std::vector<Session> out;
  for (const auto& [id, s] : sessions_) out.push_back(s);
  return out;
}

std::vector<Questionnaire> Study::questionnaires() const {
  std::shared_lock lock(mutex_);
  std::vector<Questionnaire> out;
  for (const auto& [id, q] : questionnaires_) out.push_back(q);
  return out;
}

const Participant* Study::participant_for_token(const std::string& token) const {
  for (const auto& p : config_.participants)
    if (p.token == token) return &p;
  return nullptr;
}

std::unique_ptr<Study> Study::replay(StudyConfig config, const std::filesystem::path& log) {
  auto study = std::make_unique<Study>(std::move(config));
  std::ifstream in(log);
  if (!in) throw IoError("cannot open event log " + log.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json e;
    try {
      e = json::parse(line);
    } catch (const json::parse_error& ex) {
      throw ParseError(ex.what(), n);
    }
    RVL_CHECK(e.value("seq", -1L) == study->next_event_, ParseError, "event log sequence gap at line " + std::to_string(n));
    study->apply(e);
  }
  return study;
}

BehaviorOutcome classify_behavior(const ReadingRecord& record, const AssistancePayload& payload,
                                  const std::string& ground_truth, const ClassifyOptions& options) {
  RVL_CHECK(record.complete(), ValidationError, "reading of case " + record.case_id + " is incomplete");
  RVL_CHECK(!payload.top5_diseases.empty(), ValidationError, "assistance has no suggestions");
  const std::string& prelim = record.stage1->diagnosis;
  const std::string& final_dx = record.stage2->diagnosis;
  const std::string& top1 = payload.top5_diseases.front().first;
  const bool prelim_ok = prelim == ground_truth;
  const bool final_ok = final_dx == ground_truth;

  BehaviorOutcome out;
  if (final_dx != prelim) {
    out.behavior = Behavior::modified;
    const int rank = payload.rank_of(final_dx);
    out.adoption = rank == 1 ? Adoption::top1_adopt : rank >= 2 ? Adoption::top2to5_adopt : Adoption::independent;
    if (!prelim_ok) out.outcome = final_ok ? Outcome::optimal_revision : Outcome::ineffective_correction;
    else out.outcome = Outcome::risk_inducing_revision;
    return out;
  }
  out.behavior = Behavior::maintained;
  if (prelim_ok) out.outcome = top1 == ground_truth ? Outcome::optimal_collaboration : Outcome::independent_success;
  else if (top1 == prelim) out.outcome = Outcome::ineffective_validation;
  else if (top1 == ground_truth) out.outcome = Outcome::persistent_error;
  else if (options.corrective_top5 && payload.rank_of(ground_truth) > 0) out.outcome = Outcome::persistent_error;
  else out.outcome = Outcome::uncategorized;
  return out;
}

namespace {

struct Reading {
  const Participant* participant;
  const Case* item;
  const ReadingRecord* record;
};

metrics::StatReport mean_ci(const std::vector<double>& values, const AggregateOptions& o, const std::string& name) {
  metrics::ScoreSet set;
  set.scores = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
  set.labels = metrics::LabelMatrix::Ones(set.scores.rows(), 1);
  metrics::BootstrapOptions b;
  b.n_resamples = o.bootstrap_resamples;
  b.seed = o.seed;
  auto r = metrics::bootstrap_ci([](const metrics::ScoreSet& s) { return s.scores.mean(); }, set, b);
  r.metric = name;
  return r;
}

AccuracyRow accuracy_row(const std::string& group, const std::vector<Reading>& rows, const AggregateOptions& o) {
  AccuracyRow a;
  a.group = group;
  a.n = static_cast<long>(rows.size());
  std::vector<double> pre, post;
  std::vector<bool> pre_b, post_b;
  for (const auto& r : rows) {
    const bool p = r.record->stage1->diagnosis == r.item->ground_truth;
    const bool q = r.record->stage2->diagnosis == r.item->ground_truth;
    pre.push_back(p);
    post.push_back(q);
    pre_b.push_back(p);
    post_b.push_back(q);
  }
  a.pre = std::accumulate(pre.begin(), pre.end(), 0.0) / static_cast<double>(a.n);
  a.post = std::accumulate(post.begin(), post.end(), 0.0) / static_cast<double>(a.n);
  a.pre_ci = mean_ci(pre, o, "accuracy_pre");
  a.post_ci = mean_ci(post, o, "accuracy_post");
  a.mcnemar = metrics::mcnemar(pre_b, post_b);
  return a;
}

json stat_json(const metrics::StatReport& r) {
  return {{"point", r.point}, {"ci_low", r.ci_low}, {"ci_high", r.ci_high}, {"n_resamples", r.n_resamples}, {"seed", r.seed}};
}

}  // namespace

StudyReport aggregate_results(const std::vector<Session>& sessions, const StudyConfig& config,
                              const std::vector<Questionnaire>& questionnaires, const AggregateOptions& options) {
  std::vector<std::string> incomplete;
  for (const auto& s : sessions)
    if (!s.complete()) incomplete.push_back(s.id);
  if (!incomplete.empty()) {
    std::string list;
    for (const auto& id : incomplete) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("incomplete sessions: " + list);
  }
  RVL_CHECK(!sessions.empty(), ValidationError, "no sessions to aggregate");

  // Canonical order: (participant, session id, case id).
  std::vector<const Session*> ordered;
  for (const auto& s : sessions) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(), [](const Session* a, const Session* b) {
    return std::tie(a->participant_id, a->id) < std::tie(b->participant_id, b->id);
  });
  std::vector<Reading> readings;
  for (const Session* s : ordered) {
    const Participant& p = config.participant(s->participant_id);
    for (const auto& [cid, rec] : s->records) readings.push_back({&p, &config.case_by_id(cid), &rec});
  }

  StudyReport rep;
  rep.readings = static_cast<long>(readings.size());
  rep.accuracy.push_back(accuracy_row("overall", readings, options));
  for (Tier t : {Tier::trainee, Tier::junior, Tier::senior, Tier::expert}) {
    std::vector<Reading> sub;
    for (const auto& r : readings)
      if (r.participant->tier == t) sub.push_back(r);
    if (!sub.empty()) rep.accuracy.push_back(accuracy_row(to_string(t), sub, options));
  }

  for (Outcome o : kOutcomes) rep.outcomes[to_string(o)] = 0;
  for (Adoption a : {Adoption::none, Adoption::top1_adopt, Adoption::top2to5_adopt, Adoption::independent})
    rep.adoption[to_string(a)] = 0;
  long modified = 0, modified_conflict = 0, modified_agree = 0, agree = 0;
  std::map<std::string, std::pair<double, long>> delta_sum;
  double util[3] = {0, 0, 0};
  for (const auto& r : readings) {
    const auto& pay = r.item->assistance;
    const auto b = classify_behavior(*r.record, pay, r.item->ground_truth, options.classify);
    ++rep.outcomes[to_string(b.outcome)];
    ++rep.adoption[to_string(b.adoption)];
    const bool mod = b.behavior == Behavior::modified;
    const std::string& prelim = r.record->stage1->diagnosis;
    const bool conflict = options.conflict_top5 ? pay.rank_of(prelim) == 0 : pay.top5_diseases.front().first != prelim;
    modified += mod;
    if (conflict) {
      ++rep.conflict_readings;
      modified_conflict += mod;
    } else {
      ++agree;
      modified_agree += mod;
    }
    const std::string key = conflict ? "conflict" : "agree";
    const int delta = r.record->stage2->confidence - r.record->stage1->confidence;
    ++rep.confidence_delta[key][delta];
    delta_sum[key].first += delta;
    delta_sum[key].second += 1;
    util[0] += r.record->stage2->ratings.diseases;
    util[1] += r.record->stage2->ratings.lesions;
    util[2] += r.record->stage2->ratings.heatmap;
  }
  const double n = static_cast<double>(readings.size());
  rep.modification_rate = static_cast<double>(modified) / n;
  rep.modification_rate_conflict =
      rep.conflict_readings ? static_cast<double>(modified_conflict) / static_cast<double>(rep.conflict_readings) : 0.0;
  rep.modification_rate_agree = agree ? static_cast<double>(modified_agree) / static_cast<double>(agree) : 0.0;
  for (const auto& [key, sum] : delta_sum) rep.mean_confidence_delta[key] = sum.first / static_cast<double>(sum.second);
  rep.utility_means = {{"diseases", util[0] / n}, {"lesions", util[1] / n}, {"heatmap", util[2] / n}};

  std::map<std::string, std::map<std::string, std::pair<double, long>>> q_sum;
  for (const auto& q : questionnaires) {
    const std::string tier = to_string(config.participant(q.participant_id).tier);
    for (const auto& [item, v] : q.ratings) {
      q_sum[tier][item].first += v;
      q_sum[tier][item].second += 1;
    }
  }
  for (const auto& [tier, items] : q_sum)
    for (const auto& [item, sum] : items) rep.questionnaire_means[tier][item] = sum.first / static_cast<double>(sum.second);
  return rep;
}

json StudyReport::to_json() const {
  json acc = json::array();
  for (const auto& a : accuracy)
    acc.push_back({{"group", a.group},
                   {"n", a.n},
                   {"pre", a.pre},
                   {"post", a.post},
                   {"pre_ci", stat_json(a.pre_ci)},
                   {"post_ci", stat_json(a.post_ci)},
                   {"mcnemar", {{"b", a.mcnemar.b}, {"c", a.mcnemar.c}, {"p_value", a.mcnemar.p_value}}}});
  json deltas = json::object();
  for (const auto& [key, hist] : confidence_delta) {
    json h = json::object();
    for (const auto& [d, count] : hist) h[std::to_string(d)] = count;
    deltas[key] = h;
  }
  return {{"readings", readings},
          {"accuracy", acc},
          {"modification_rate", modification_rate},
          {"conflict_readings", conflict_readings},
          {"modification_rate_conflict", modification_rate_conflict},
          {"modification_rate_agree", modification_rate_agree},
          {"outcomes", outcomes},
          {"adoption", adoption},
          {"confidence_delta", deltas},
          {"mean_confidence_delta", mean_confidence_delta},
          {"utility_means", utility_means},
          {"questionnaire_means", questionnaire_means}};
}

}  // namespace retinavl::readerstudy
