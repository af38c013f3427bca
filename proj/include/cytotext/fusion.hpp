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

#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cytotext/endpoints.hpp"
#include "cytotext/schema.hpp"

namespace cytotext {

// Vote rule for consensus extraction.
//
// A dimension is fusable when at least `min_coverage` annotators addressed it.
// The winning verdict must hold strictly more votes than the other one and, in
// the default majority mode (min_votes unset), more than half of the votes
// cast; with min_votes set it needs at least that many. With
// confidence_weighting a vote counts as the assertion's confidence instead of 1.
// Confidence of a consensus assertion is winning votes / votes cast: a vote
// fraction, not a calibrated probability.
struct FusionPolicy {
  std::optional<int> min_votes;
  int min_coverage = 2;
  bool confidence_weighting = false;
  std::optional<EndpointConfig> integrator;
};

void validate(const FusionPolicy& policy);
FusionPolicy policy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const FusionPolicy& policy);  // vote rule only, no integrator

enum class Resolution { kConsensus, kDropped };

struct ConflictEntry {
  MorphDimension dimension{};
  std::vector<std::pair<std::string, Verdict>> votes;  // ordered by endpoint id
  Resolution resolution = Resolution::kDropped;

  friend bool operator==(const ConflictEntry&, const ConflictEntry&) = default;
};

struct FusedDescription {
  std::map<MorphDimension, DimensionAssertion> consensus;
  std::set<MorphDimension> missing_dimensions;
  std::vector<ConflictEntry> conflict_log;  // dimension order
  std::string narrative;
  std::vector<std::string> source_annotators;  // sorted

  friend bool operator==(const FusedDescription&, const FusedDescription&) = default;
};

struct AnnotatorCaption {
  std::string endpoint_id;
  StructuredCaption caption;
};

// Deterministic structured vote over parsed annotator captions. The result is
// independent of the order of `captions`; evidence of agreeing annotators is
// joined with "; " in ascending endpoint-id order. The narrative is left empty.
// Throws Error(kEmptyInput) for no captions, kInvalidArgument for duplicate ids.
FusedDescription fuse_consensus(std::span<const AnnotatorCaption> captions, const FusionPolicy& policy);

// One sentence per consensus dimension, in dimension order.
std::string render_template_narrative(const FusedDescription& fused);

// Markdown-ish bullet table fed to the integrator prompt.
std::string render_consensus_table(const FusedDescription& fused);
std::string render_source_narratives(const std::vector<std::string>& narratives);

// Template rendering when `integrator` is unset; otherwise asks the integrator
// endpoint to write the paragraph from `prompt_template`, whose
// {consensus_table} and {narratives} placeholders are filled in. Endpoint
// errors propagate as EndpointError.
std::string summarize_narrative(const FusedDescription& fused,
                                const std::vector<std::string>& source_narratives,
                                const std::optional<EndpointConfig>& integrator, ChatClient* client,
                                const std::string& prompt_template);

nlohmann::json to_json(const FusedDescription& fused);
FusedDescription fused_from_json(const nlohmann::json& j);

}  // namespace cytotext
