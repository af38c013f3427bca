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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cytotext/endpoints.hpp"
#include "cytotext/fusion.hpp"
#include "cytotext/lexicon.hpp"

namespace cytotext {

// Prompt templates. Placeholders are written as {name}; see docs/config.md for
// the set each template understands.
struct PromptSet {
  std::string annotator_system;
  std::string annotator_user;      // {dimension_list}
  std::string integrator;          // {consensus_table} {narratives}
  std::string expert_system;
  std::string expert_user;         // {missing_dimensions} {fused_narrative}
  std::string bench_system;
  std::string morpho_question;     // {dimension_name} {positive_label} {negative_label}
  std::string tbs_question;        // {tbs_options}
  std::string replay_domain;       // {narrative}
  std::string replay_general;

  static PromptSet defaults();
};

// "- Nuclear Enlargement (enlarged / not enlarged)" lines for every dimension.
std::string render_dimension_list();
// "NILM (Negative for ...), ASC-US (...), ..."
std::string render_tbs_options();

struct ReplaySettings {
  double domain_weight = 1.0;
  double general_weight = 1.0;
  std::uint64_t seed = 0;
};

// Everything a run needs, loaded from one JSON file. Relative paths inside the
// file resolve against the file's directory.
struct PipelineConfig {
  std::vector<EndpointConfig> endpoints;
  std::vector<std::string> annotator_ids;
  std::optional<std::string> integrator_id;
  std::optional<std::string> expert_id;
  std::optional<std::string> generator_id;
  std::optional<std::string> model_id;  // benchmark target
  PromptSet prompts = PromptSet::defaults();
  std::shared_ptr<const Lexicon> lexicon = std::make_shared<Lexicon>(Lexicon::builtin());
  FusionPolicy fusion;
  std::size_t shard_size = 1000;
  int concurrency = 4;
  std::optional<std::string> fixed_created_at;
  ReplaySettings replay;
  std::uint64_t reformat_seed = 0;
  std::filesystem::path base_dir = ".";

  const EndpointConfig& endpoint(const std::string& id) const;
  std::vector<EndpointConfig> annotators() const;
  std::optional<EndpointConfig> role(const std::optional<std::string>& id) const;
};

PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
// Throws Error(kIo) if the file is missing, kConfigInvalid if malformed.
PipelineConfig load_config(const std::filesystem::path& path);

// SHA-256 over prompts, lexicon, fusion policy and the annotator / integrator /
// expert model names. Identical configs hash identically; endpoint URLs and
// concurrency settings do not participate.
std::string config_hash(const PipelineConfig& config);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace cytotext
