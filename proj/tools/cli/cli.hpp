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

#pragma once

#include "cli/framework.hpp"

#include <ostream>
#include <string>
#include <vector>

namespace retinavl::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Every subcommand in display order.
std::vector<Command> all_commands();

/// Runs one invocation (args exclude the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Command factories.
Command curate_command();
Command pretrain_command();
Command zeroshot_eval_command();
Command export_embeddings_command();
Command localize_command();
Command masking_study_command();
Command probe_command();
Command finetune_command();
Command label_curve_command();
Command segment_command();
Command metrics_command();
Command serve_command();

}  // namespace retinavl::cli
