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

#include "retinavl/readerstudy/api.hpp"

#include "httplib.h"

#include <fstream>
#include <sstream>

namespace retinavl::readerstudy {

using nlohmann::json;

namespace {

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path.substr(0, path.find('?'))) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

ApiResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

ApiResponse error(int status, const std::string& code, const std::string& message) {
  return json_response(status, {{"error", code}, {"message", message}});
}

std::string bearer(const std::string& header) {
  const std::string prefix = "Bearer ";
  return header.rfind(prefix, 0) == 0 ? header.substr(prefix.size()) : std::string();
}

json session_json(const Session& s) {
  json records = json::array();
  for (const auto& id : s.order) {
    const auto it = s.records.find(id);
    if (it != s.records.end()) records.push_back(it->second);
  }
  return {{"session", s.id}, {"participant", s.participant_id}, {"completed", s.cursor}, {"total", s.order.size()},
          {"complete", s.complete()}, {"records", records}};
}

}  // namespace

Api::Api(Study& study, ApiOptions options) : study_(study), options_(std::move(options)) {}

ApiResponse Api::handle(const ApiRequest& req) const {
  const auto parts = split_path(req.path);
  const std::string token = bearer(req.authorization);
  const bool admin = !token.empty() && token == study_.config().admin_token;
  const Participant* who = token.empty() ? nullptr : study_.participant_for_token(token);
  if (!admin && !who) return error(401, "unauthorized", "missing or unknown bearer token");

  auto body = [&req]() {
    try {
      return req.body.empty() ? json::object() : json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("request body: ") + e.what());
    }
  };
  auto file = [this](const std::string& path) -> ApiResponse {
    std::filesystem::path p = path;
    if (p.is_relative()) p = options_.asset_root / p;
    std::ifstream in(p, std::ios::binary);
    if (!in) return error(404, "not_found", "asset unavailable");
    std::ostringstream ss;
    ss << in.rdbuf();
    return {200, "image/png", ss.str()};
  };

  try {
    if (req.method == "GET" && parts == std::vector<std::string>{"admin", "report"}) {
      if (!admin) return error(403, "forbidden", "administrator token required");
      const auto report = aggregate_results(study_.sessions(), study_.config(), study_.questionnaires(), options_.report);
      return json_response(200, report.to_json());
    }
    if (req.method == "POST" && parts == std::vector<std::string>{"sessions"}) {
      const json b = body();
      std::string pid;
      if (admin) pid = b.value("participant", std::string());
      else pid = who->id;
      if (pid.empty()) return error(422, "invalid", "participant is required");
      if (!admin && b.contains("participant") && b["participant"] != pid)
        return error(403, "forbidden", "cannot open a session for another participant");
      const std::string id = study_.create_session(pid, b.value("order_seed", std::uint64_t{0}));
      return json_response(201, {{"session", id}, {"total", study_.config().cases.size()}});
    }
    if (parts.size() >= 2 && parts[0] == "sessions") {
      Session s;
      try {
        s = study_.session(parts[1]);
      } catch (const ValidationError&) {
        return error(404, "not_found", "unknown session");
      }
      if (!admin && s.participant_id != who->id) return error(403, "forbidden", "session belongs to another participant");

      if (parts.size() == 2 && req.method == "GET") return json_response(200, session_json(s));
      if (parts.size() == 3 && parts[2] == "next" && req.method == "GET") {
        if (s.complete()) return json_response(200, {{"complete", true}, {"total", s.order.size()}});
        const std::string cid = s.current_case();
        const auto it = s.records.find(cid);
        const bool awaiting_final = it != s.records.end() && it->second.stage1.has_value();
        return json_response(200, {{"complete", false},
                                   {"case", cid},
                                   {"index", s.cursor + 1},
                                   {"total", s.order.size()},
                                   {"stage", awaiting_final ? "stage2" : "stage1"},
                                   {"image", "/sessions/" + s.id + "/cases/" + cid + "/image"}});
      }
      if (parts.size() == 3 && parts[2] == "questionnaire" && req.method == "POST") {
        const json b = body();
        study_.submit_questionnaire(s.id, b.at("ratings").get<std::map<std::string, int>>());
        return json_response(200, {{"accepted", true}});
      }
      if (parts.size() == 5 && parts[2] == "cases") {
        const std::string& cid = parts[3];
        const std::string& what = parts[4];
        if (std::find(s.order.begin(), s.order.end(), cid) == s.order.end())
          return error(404, "not_found", "case is not part of this session");
        if (what == "stage1" && req.method == "POST") {
          const json b = body();
          study_.submit_stage1(s.id, cid, b.value("diagnosis", std::string()), b.value("confidence", 0));
          return json_response(200, {{"accepted", true}, {"stage", "stage1"}});
        }
        if (what == "stage2" && req.method == "POST") {
          const json b = body();
          const json r = b.value("ratings", json::object());
          study_.submit_stage2(s.id, cid, b.value("diagnosis", std::string()), b.value("confidence", 0),
                               {r.value("diseases", 0), r.value("lesions", 0), r.value("heatmap", 0)});
          return json_response(200, {{"accepted", true}, {"stage", "stage2"}});
        }
        if (what == "assistance" && req.method == "GET") {
          json payload = study_.get_assistance(s.id, cid);
          payload["heatmap"] = "/sessions/" + s.id + "/cases/" + cid + "/heatmap";
          return json_response(200, payload);
        }
        if (what == "heatmap" && req.method == "GET") return file(study_.get_assistance(s.id, cid).heatmap);
        if (what == "image" && req.method == "GET") return file(study_.config().case_by_id(cid).image);
      }
    }
    return error(404, "not_found", "no route for " + req.method + " " + req.path);
  } catch (const ProtocolViolation& e) {
    return error(409, to_string(e.violation()), e.what());
  } catch (const ValidationError& e) {
    return error(422, "invalid", e.what());
  } catch (const ParseError& e) {
    return error(400, "bad_request", e.what());
  } catch (const json::exception& e) {
    return error(400, "bad_request", e.what());
  }
}

struct Server::Impl {
  httplib::Server server;
};

Server::Server(const Api& api) : impl_(std::make_unique<Impl>()) {
  auto handler = [&api](const httplib::Request& req, httplib::Response& res) {
    ApiRequest r{req.method, req.path, req.get_header_value("Authorization"), req.body};
    const ApiResponse out = api.handle(r);
    res.status = out.status;
    res.set_content(out.body, out.content_type);
  };
  const std::string any = R"(/.*)";
  impl_->server.Get(any, handler);
  impl_->server.Post(any, handler);
}

Server::~Server() { stop(); }

int Server::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }
bool Server::listen_after_bind() { return impl_->server.listen_after_bind(); }
bool Server::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }
void Server::stop() { impl_->server.stop(); }

}  // namespace retinavl::readerstudy
