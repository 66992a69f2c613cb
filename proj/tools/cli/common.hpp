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

// Data loading and reporting helpers shared by the subcommands.

#pragma once

#include "cli/framework.hpp"

#include "retinavl/core/image.hpp"
#include "retinavl/data/records.hpp"
#include "retinavl/encoders/encoders.hpp"
#include "retinavl/metrics/metrics.hpp"

#include <optional>

namespace retinavl::cli {

// Common parameters.
Param preprocess_param();
Param bootstrap_param();
Param split_param(const std::string& fallback);

/// Reads an image and brings it to side x side: plain resize for "none", else the modality pipeline.
Image load_for_model(const std::filesystem::path& path, int side, const std::string& preprocess);
std::vector<Image> load_images(const data::DatasetManifest& manifest, int side, const std::string& preprocess);

/// Manifest from setting `name`, restricted to the split setting when non-empty.
data::DatasetManifest load_manifest(const RunContext& ctx, const std::string& name = "manifest",
                                    const std::string& split_setting = "split");

/// Binary mask from an image file (max channel > 0.5), resized to height x width.
metrics::Mask read_mask(const std::filesystem::path& path, int height, int width);

metrics::BootstrapOptions bootstrap_options(const RunContext& ctx);

/// Bootstrap CI of the mean of per-unit values.
metrics::StatReport mean_report(const std::string& name, const std::vector<double>& values,
                                const metrics::BootstrapOptions& opts);

/// Reports for a scored classification task. Thresholds, when given, are per column.
/// Metrics undefined on this data are skipped with a note in the log.
std::vector<metrics::StatReport> classification_reports(const metrics::ScoreSet& set,
                                                        const std::vector<std::string>& classes,
                                                        data::LabelMode mode, const std::optional<Vector>& thresholds,
                                                        const metrics::BootstrapOptions& opts, std::ostream& log);

/// Score table: `id`, then `label:<class>` columns, then `score:<class>` columns.
struct ScoreTable {
  std::vector<std::string> classes;
  metrics::ScoreSet set;
};
Table score_table(const metrics::ScoreSet& set, const std::vector<std::string>& classes);
ScoreTable read_score_table(const std::filesystem::path& path);

/// Rows whose every label is 0 or 1 with exactly one positive.
bool is_one_hot(const metrics::LabelMatrix& labels);

}  // namespace retinavl::cli
