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

#include "cytotext/refine.hpp"

#include "cytotext/error.hpp"
#include "log.hpp"
#include "text_util.hpp"

namespace cytotext {

FinalDescription final_from_fused(const FusedDescription& fused) {
  FinalDescription f;
  f.assertions = fused.consensus;
  for (const auto& [d, _] : fused.consensus) f.provenance.emplace(d, Provenance::kConsensus);
  f.narrative = fused.narrative;
  return f;
}

FinalDescription merge_expert(const FusedDescription& fused, const StructuredCaption& reply,
                              const std::string& expert_id) {
  auto f = final_from_fused(fused);
  f.expert_endpoint_id = expert_id;

  std::size_t adopted = 0;
  for (const auto& [d, a] : reply.assertions) {
    const auto code = std::string(info(d).code);
    if (auto it = fused.consensus.find(d); it != fused.consensus.end()) {
      if (it->second.verdict != a.verdict) {
        f.warnings.push_back("expert contradicts consensus on " + code + " (consensus " +
                             std::string(verdict_name(it->second.verdict)) + ", expert " +
                             std::string(verdict_name(a.verdict)) + "); consensus kept");
      }
      continue;
    }
    if (!fused.missing_dimensions.contains(d)) continue;
    f.assertions[d] = a;
    f.provenance[d] = Provenance::kExpert;
    ++adopted;
  }

  if (adopted == 0) {
    f.warnings.push_back("expert reply supplied no assertion for any missing dimension");
    return f;
  }
  for (auto d : fused.missing_dimensions) {
    if (!f.assertions.contains(d)) {
      f.warnings.push_back("expert left missing dimension " + std::string(info(d).code) + " unasserted");
    }
  }
  auto supplement = std::string(trim(reply.narrative));
  f.narrative = fused.narrative.empty() ? supplement : fused.narrative + "\n\n" + supplement;
  return f;
}

std::string describe_missing(const std::set<MorphDimension>& missing) {
  std::vector<std::string> parts;
  for (auto d : missing) {
    parts.push_back(std::string(info(d).code) + " (" + std::string(info(d).display_name) + ": " +
                    std::string(info(d).positive_label) + " or " + std::string(info(d).negative_label) + ")");
  }
  return join(parts, ", ");
}

FinalDescription refine_expert(std::string_view image, const std::string& media_type,
                               const FusedDescription& fused, const EndpointConfig& expert,
                               const Lexicon& lexicon, ChatClient& client,
                               const std::string& system_prompt, const std::string& prompt_template) {
  if (fused.missing_dimensions.empty()) return final_from_fused(fused);

  auto prompt = replace_all(prompt_template, "{missing_dimensions}", describe_missing(fused.missing_dimensions));
  prompt = replace_all(std::move(prompt), "{fused_narrative}", fused.narrative);
  auto response = client.send_chat(expert, make_request(expert, system_prompt, std::move(prompt), image, media_type));

  StructuredCaption parsed;
  if (!trim(response.text).empty()) parsed = parse_structured_caption(response.text, lexicon);
  auto f = merge_expert(fused, parsed, expert.id);
  for (const auto& w : f.warnings) log_message(LogLevel::kDebug, "refine: " + w);
  return f;
}

nlohmann::json to_json(const FinalDescription& f) {
  auto prov = nlohmann::json::object();
  for (const auto& [d, p] : f.provenance) {
    prov[std::string(info(d).code)] = p == Provenance::kConsensus ? "consensus" : "expert";
  }
  return {{"assertions", assertions_to_json(f.assertions)},
          {"provenance", std::move(prov)},
          {"narrative", f.narrative},
          {"expert_endpoint_id", f.expert_endpoint_id ? nlohmann::json(*f.expert_endpoint_id) : nlohmann::json()},
          {"warnings", f.warnings}};
}

FinalDescription final_from_json(const nlohmann::json& j) {
  FinalDescription f;
  f.assertions = assertions_from_json(j.at("assertions"));
  for (const auto& [code, p] : j.at("provenance").items()) {
    f.provenance[dimension_from_json(code)] = p.get<std::string>() == "expert" ? Provenance::kExpert
                                                                              : Provenance::kConsensus;
  }
  f.narrative = j.value("narrative", std::string{});
  if (j.contains("expert_endpoint_id") && !j.at("expert_endpoint_id").is_null()) {
    f.expert_endpoint_id = j.at("expert_endpoint_id").get<std::string>();
  }
  f.warnings = j.value("warnings", std::vector<std::string>{});
  return f;
}

}  // namespace cytotext
