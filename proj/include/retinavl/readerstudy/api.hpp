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

// HTTP/JSON interface of the reader study.
//
//   POST /sessions                                 {"order_seed": n[, "participant": id (admin)]}
//   GET  /sessions/{id}                            progress and committed records
//   GET  /sessions/{id}/next                       current case and stage
//   POST /sessions/{id}/cases/{cid}/stage1         {"diagnosis", "confidence"}
//   GET  /sessions/{id}/cases/{cid}/assistance     after stage 1 only
//   GET  /sessions/{id}/cases/{cid}/image          PNG
//   GET  /sessions/{id}/cases/{cid}/heatmap        PNG overlay, after stage 1 only
//   POST /sessions/{id}/cases/{cid}/stage2         {"diagnosis", "confidence", "ratings": {"diseases", "lesions", "heatmap"}}
//   POST /sessions/{id}/questionnaire              {"ratings": {item: 1..5}}
//   GET  /admin/report                             aggregate report (admin token)
//
// Every request carries "Authorization: Bearer <token>". Protocol violations
// answer 409 with {"error": <violation>, "message"}; invalid fields 422.

#pragma once

#include "retinavl/readerstudy/study.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace retinavl::readerstudy {

struct ApiRequest {
  std::string method;
  std::string path;
  std::string authorization;  ///< raw header value
  std::string body;
};

struct ApiResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ApiOptions {
  /// Relative image and heatmap paths resolve against this directory.
  std::filesystem::path asset_root = ".";
  AggregateOptions report;
};

class Api {
 public:
  Api(Study& study, ApiOptions options = {});
  /// Pure request handling, independent of any socket layer.
  ApiResponse handle(const ApiRequest& request) const;

 private:
  Study& study_;
  ApiOptions options_;
};

/// Blocking HTTP server over an Api.
class Server {
 public:
  explicit Server(const Api& api);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds an ephemeral port and returns it (before listen_after_bind).
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace retinavl::readerstudy
