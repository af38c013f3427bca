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

#include "cytotext/fusion.hpp"

#include <algorithm>
#include <cstdio>

#include "cytotext/error.hpp"
#include "text_util.hpp"

namespace cytotext {

void validate(const FusionPolicy& p) {
  if (p.min_coverage < 1) throw Error(ErrorCode::kConfigInvalid, "fusion.min_coverage must be >= 1");
  if (p.min_votes) {
    const int floor = (p.min_coverage + 2) / 2;  // ceil((min_coverage + 1) / 2)
    if (*p.min_votes < floor) {
      throw Error(ErrorCode::kConfigInvalid,
                  "fusion.min_votes must be >= " + std::to_string(floor) + " for min_coverage " +
                      std::to_string(p.min_coverage));
    }
  }
  if (p.integrator) validate(*p.integrator);
}

FusionPolicy policy_from_json(const nlohmann::json& j) {
  FusionPolicy p;
  try {
    p.min_coverage = j.value("min_coverage", p.min_coverage);
    if (j.contains("min_votes") && !j.at("min_votes").is_null()) p.min_votes = j.at("min_votes").get<int>();
    p.confidence_weighting = j.value("confidence_weighting", false);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kConfigInvalid, std::string("bad fusion policy: ") + ex.what());
  }
  validate(p);
  return p;
}

nlohmann::json to_json(const FusionPolicy& p) {
  return {{"min_coverage", p.min_coverage},
          {"min_votes", p.min_votes ? nlohmann::json(*p.min_votes) : nlohmann::json()},
          {"confidence_weighting", p.confidence_weighting}};
}

FusedDescription fuse_consensus(std::span<const AnnotatorCaption> captions, const FusionPolicy& policy) {
  if (captions.empty()) throw Error(ErrorCode::kEmptyInput, "fuse_consensus needs at least one caption");

  std::vector<const AnnotatorCaption*> ordered;
  for (const auto& c : captions) ordered.push_back(&c);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->endpoint_id < b->endpoint_id; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->endpoint_id == ordered[i - 1]->endpoint_id) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate annotator id '" + ordered[i]->endpoint_id + "'");
    }
  }

  FusedDescription out;
  for (const auto* c : ordered) out.source_annotators.push_back(c->endpoint_id);

  for (const auto& dim : kDimensions) {
    const auto d = dim.dimension;
    std::vector<std::pair<std::string, const DimensionAssertion*>> cast;
    for (const auto* c : ordered) {
      if (auto it = c->caption.assertions.find(d); it != c->caption.assertions.end()) {
        cast.emplace_back(c->endpoint_id, &it->second);
      }
    }

    double pos = 0.0, neg = 0.0;
    for (const auto& [_, a] : cast) {
      const double w = policy.confidence_weighting ? a->confidence : 1.0;
      (a->verdict == Verdict::kPositive ? pos : neg) += w;
    }
    const double total = pos + neg;
    const bool split = std::any_of(cast.begin(), cast.end(), [](const auto& v) {
      return v.second->verdict == Verdict::kPositive;
    }) && std::any_of(cast.begin(), cast.end(), [](const auto& v) {
      return v.second->verdict == Verdict::kNegative;
    });

    std::optional<Verdict> winner;
    if (static_cast<int>(cast.size()) >= policy.min_coverage && total > 0.0 && pos != neg) {
      const Verdict lead = pos > neg ? Verdict::kPositive : Verdict::kNegative;
      const double lead_votes = std::max(pos, neg);
      const bool enough = policy.min_votes ? lead_votes >= static_cast<double>(*policy.min_votes)
                                           : lead_votes * 2.0 > total;
      if (enough) winner = lead;
    }

    if (winner) {
      DimensionAssertion a;
      a.dimension = d;
      a.verdict = *winner;
      a.confidence = (*winner == Verdict::kPositive ? pos : neg) / total;
      std::vector<std::string> evidence;
      for (const auto& [_, v] : cast) {
        if (v->verdict == *winner && !v->evidence.empty()) evidence.push_back(v->evidence);
      }
      a.evidence = join(evidence, "; ");
      out.consensus.emplace(d, std::move(a));
    } else {
      out.missing_dimensions.insert(d);
    }

    if (split) {
      ConflictEntry entry;
      entry.dimension = d;
      for (const auto& [id, v] : cast) entry.votes.emplace_back(id, v->verdict);
      entry.resolution = winner ? Resolution::kConsensus : Resolution::kDropped;
      out.conflict_log.push_back(std::move(entry));
    }
  }
  return out;
}

std::string render_template_narrative(const FusedDescription& fused) {
  if (fused.consensus.empty()) return "No morphological features reached consensus among the annotators.";
  std::vector<std::string> sentences;
  for (const auto& [d, a] : fused.consensus) {
    sentences.push_back(std::string(info(d).display_name) + ": " +
                        std::string(polarity_label(d, a.verdict)) + ".");
  }
  return join(sentences, " ");
}

std::string render_consensus_table(const FusedDescription& fused) {
  std::string out;
  for (const auto& [d, a] : fused.consensus) {
    char conf[16];
    std::snprintf(conf, sizeof conf, "%.2f", a.confidence);
    out += "- " + std::string(info(d).display_name) + " (" + std::string(info(d).code) +
           "): " + std::string(polarity_label(d, a.verdict)) + " [agreement " + conf + "]\n";
  }
  if (out.empty()) out = "- (no consensus features)\n";
  return out;
}

std::string render_source_narratives(const std::vector<std::string>& narratives) {
  std::string out;
  for (std::size_t i = 0; i < narratives.size(); ++i) {
    out += "[" + std::to_string(i + 1) + "] " + std::string(trim(narratives[i])) + "\n";
  }
  return out;
}

std::string summarize_narrative(const FusedDescription& fused,
                                const std::vector<std::string>& source_narratives,
                                const std::optional<EndpointConfig>& integrator, ChatClient* client,
                                const std::string& prompt_template) {
  if (!integrator) return render_template_narrative(fused);
  if (!client) throw Error(ErrorCode::kInvalidArgument, "integrator configured without a chat client");
  auto prompt = replace_all(prompt_template, "{consensus_table}", render_consensus_table(fused));
  prompt = replace_all(std::move(prompt), "{narratives}", render_source_narratives(source_narratives));
  auto response = client->send_chat(*integrator, make_request(*integrator, "", std::move(prompt)));
  return std::string(trim(response.text));
}

nlohmann::json to_json(const FusedDescription& f) {
  auto missing = nlohmann::json::array();
  for (auto d : f.missing_dimensions) missing.push_back(info(d).code);
  auto conflicts = nlohmann::json::array();
  for (const auto& c : f.conflict_log) {
    auto votes = nlohmann::json::array();
    for (const auto& [id, v] : c.votes) votes.push_back({{"endpoint_id", id}, {"verdict", verdict_name(v)}});
    conflicts.push_back({{"dimension", info(c.dimension).code},
                         {"votes", std::move(votes)},
                         {"resolution", c.resolution == Resolution::kConsensus ? "consensus" : "dropped"}});
  }
  return {{"consensus", assertions_to_json(f.consensus)},
          {"missing_dimensions", std::move(missing)},
          {"conflict_log", std::move(conflicts)},
          {"narrative", f.narrative},
          {"source_annotators", f.source_annotators}};
}

FusedDescription fused_from_json(const nlohmann::json& j) {
  FusedDescription f;
  f.consensus = assertions_from_json(j.at("consensus"));
  for (const auto& m : j.at("missing_dimensions")) f.missing_dimensions.insert(dimension_from_json(m));
  for (const auto& c : j.value("conflict_log", nlohmann::json::array())) {
    ConflictEntry e;
    e.dimension = dimension_from_json(c.at("dimension"));
    for (const auto& v : c.at("votes")) {
      e.votes.emplace_back(v.at("endpoint_id").get<std::string>(), verdict_from_json(v.at("verdict")));
    }
    e.resolution = c.at("resolution").get<std::string>() == "consensus" ? Resolution::kConsensus
                                                                       : Resolution::kDropped;
    f.conflict_log.push_back(std::move(e));
  }
  f.narrative = j.value("narrative", std::string{});
  f.source_annotators = j.value("source_annotators", std::vector<std::string>{});
  return f;
}

}  // namespace cytotext
