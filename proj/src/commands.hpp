// Copyright 2026 The cytotext Authors
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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cytotext/bench.hpp"
#include "cytotext/endpoints.hpp"
#include "cytotext/error.hpp"

// One function per CLI subcommand. Each returns the rendered report (may be
// empty) and a RunSummary JSON object; fatal problems are thrown as Error.

namespace cytotext {

struct CommandContext {
  ChatClient* client = nullptr;
  const std::atomic<bool>* cancel = nullptr;
  ReportFormat format = ReportFormat::kTable;
};

struct CommandOutput {
  std::string report;
  nlohmann::json summary;
  // Set when the command stopped early but still produced a summary.
  std::optional<ErrorCode> status;
};

struct AnnotateArgs {
  std::filesystem::path config;
  std::filesystem::path manifest;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> image_root;  // default: manifest directory
  bool resume = false;
};

struct FuseArgs {
  std::filesystem::path config;
  std::filesystem::path dataset_dir;
  std::filesystem::path output_dir;
};

struct RefineArgs {
  std::filesystem::path config;
  std::filesystem::path dataset_dir;
  std::filesystem::path output_dir;
  std::filesystem::path image_root = ".";
};

struct ReformatArgs {
  std::optional<std::filesystem::path> config;
  std::filesystem::path dataset_dir;
  std::optional<std::filesystem::path> templates;  // default: built-in templates
  std::optional<std::uint64_t> seed;               // default: config reformat.seed, else 0
  std::filesystem::path output;
};

struct ReplayArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> domain_dataset;
  std::optional<std::filesystem::path> general_manifest;
  std::optional<std::filesystem::path> general_image_root;  // default: manifest directory
  std::optional<std::pair<double, double>> weights;         // (domain, general)
  std::optional<std::uint64_t> seed;
  std::filesystem::path output;
};

struct EvalArgs {
  std::filesystem::path config;
  std::string bench;  // "morpho" | "tbs"
  std::filesystem::path manifest;
  std::optional<std::string> model_id;  // default: config "model"
  std::optional<std::filesystem::path> image_root;
};

struct AgreementArgs {
  std::vector<std::filesystem::path> rater_files;
  std::filesystem::path manifest;
};

struct SimulateArgs {
  std::filesystem::path trial_config;
};

CommandOutput cmd_annotate(const AnnotateArgs& args, const CommandContext& ctx);
CommandOutput cmd_fuse(const FuseArgs& args, const CommandContext& ctx);
CommandOutput cmd_refine(const RefineArgs& args, const CommandContext& ctx);
CommandOutput cmd_reformat(const ReformatArgs& args, const CommandContext& ctx);
CommandOutput cmd_replay(const ReplayArgs& args, const CommandContext& ctx);
CommandOutput cmd_eval(const EvalArgs& args, const CommandContext& ctx);
CommandOutput cmd_agreement(const AgreementArgs& args, const CommandContext& ctx);
CommandOutput cmd_simulate(const SimulateArgs& args, const CommandContext& ctx);

// Exit status for an error code: 2 for usage, configuration and input
// problems, 1 for runtime failures.
int exit_code_for(ErrorCode code);

}  // namespace cytotext
