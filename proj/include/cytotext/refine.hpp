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
#include <string>
#include <string_view>
#include <vector>

#include "cytotext/endpoints.hpp"
#include "cytotext/fusion.hpp"
#include "cytotext/lexicon.hpp"

namespace cytotext {

enum class Provenance { kConsensus, kExpert };

struct FinalDescription {
  std::map<MorphDimension, DimensionAssertion> assertions;
  std::map<MorphDimension, Provenance> provenance;
  std::string narrative;
  std::optional<std::string> expert_endpoint_id;
  std::vector<std::string> warnings;

  friend bool operator==(const FinalDescription&, const FinalDescription&) = default;
};

// Consensus content only, every dimension tagged Consensus.
FinalDescription final_from_fused(const FusedDescription& fused);

// Supplement-only merge of a parsed expert reply. Consensus assertions are never
// replaced; only dimensions listed as missing are adopted (tagged Expert).
// Contradictions of consensus and missing dimensions left unfilled are recorded
// as warnings. The narrative gains the expert reply as a second paragraph when
// at least one dimension was adopted.
FinalDescription merge_expert(const FusedDescription& fused, const StructuredCaption& expert_reply,
                              const std::string& expert_id);

// "NM (Nuclear Membrane: irregular or smooth)", comma separated.
std::string describe_missing(const std::set<MorphDimension>& missing);

// Expert stage. Skips the network entirely when nothing is missing. Otherwise sends
// the tile image with `prompt_template` ({missing_dimensions},
// {fused_narrative} filled in), parses the reply with `lexicon` and merges.
FinalDescription refine_expert(std::string_view image, const std::string& media_type,
                               const FusedDescription& fused, const EndpointConfig& expert,
                               const Lexicon& lexicon, ChatClient& client,
                               const std::string& system_prompt, const std::string& prompt_template);

nlohmann::json to_json(const FinalDescription& f);
FinalDescription final_from_json(const nlohmann::json& j);

}  // namespace cytotext
