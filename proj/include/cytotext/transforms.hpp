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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cytotext/config.hpp"
#include "cytotext/digest.hpp"
#include "cytotext/endpoints.hpp"
#include "cytotext/error.hpp"
#include "cytotext/pipeline.hpp"

namespace cytotext {

enum class Role { kSystem, kUser, kAssistant };
enum class Modality { kVisionText, kTextOnly };
enum class Origin { kReformatted, kDomainReplay, kGeneralReplay };

struct Turn {
  Role role = Role::kUser;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct InstructionSample {
  std::string sample_id;
  Modality modality = Modality::kVisionText;
  std::optional<std::string> image_ref;  // tile id
  std::optional<std::string> image_uri;
  std::vector<Turn> turns;
  std::string template_id;
  Origin origin = Origin::kReformatted;
  std::string generator_model;  // replay provenance; empty for reformatted samples

  friend bool operator==(const InstructionSample&, const InstructionSample&) = default;
};

// Turn structure and modality invariants; empty means valid.
std::vector<std::string> validate_sample(const InstructionSample& sample);

// Chat-transcript JSON: {"id", "messages": [{"role", "content"}], "images", ...}.
nlohmann::json to_json(const InstructionSample& sample);
InstructionSample sample_from_json(const nlohmann::json& j);

// A dialogue skeleton. Turn texts may reference:
//   {narrative}           final description text
//   {findings}            one line per asserted dimension
//   {tbs_categories}      TBS category list
//   {assertion:CODE}      polarity label asserted for a dimension
//   {dimension:CODE}      display name of a dimension
//   {focus_name} {focus_label} {focus_options}
//                         one asserted dimension chosen by the seeded draw
struct DialogueTemplate {
  std::string template_id;
  std::vector<Turn> turns;
  bool multi_turn = false;
};

// Throws Error(kTemplateInvalid) on unknown placeholders or bad turn structure.
void validate(const DialogueTemplate& t);
DialogueTemplate template_from_json(const nlohmann::json& j);
// One JSON object per line.
std::vector<DialogueTemplate> parse_templates(std::string_view text, std::string_view source = "<templates>");
std::vector<DialogueTemplate> load_templates(const std::filesystem::path& path);
std::vector<DialogueTemplate> default_templates();

struct ReformatResult {
  std::vector<InstructionSample> samples;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

// Pairs every record with one template drawn from a generator seeded by
// (seed, tile id). Templates whose placeholders the record cannot satisfy are
// excluded from that record's draw; a record with no eligible template is
// skipped with a warning. Output follows record order.
ReformatResult reformat_instructions(std::span<const DatasetRecord> records,
                                     std::span<const DialogueTemplate> templates, std::uint64_t seed);

using QaPairs = std::vector<std::pair<std::string, std::string>>;

// Parses "Q: ... A: ..." replies (markers at line start or after whitespace).
// nullopt unless markers strictly alternate starting with Q and every part is
// non-empty.
std::optional<QaPairs> parse_qa_pairs(std::string_view reply);

struct ReplayResult {
  std::vector<InstructionSample> samples;
  std::size_t endpoint_failures = 0;
  std::size_t unparseable = 0;
  std::vector<std::string> warnings;
};

// Text-only QA pairs generated from record narratives (origin DomainReplay).
ReplayResult generate_domain_replay(std::span<const DatasetRecord> records, const EndpointConfig& generator,
                                    ChatClient& client, const PromptSet& prompts);

// Visual QA pairs generated from general-domain images (origin GeneralReplay).
ReplayResult generate_general_replay(std::span<const ImageTile> images, const std::filesystem::path& image_root,
                                     const EndpointConfig& generator, ChatClient& client,
                                     const PromptSet& prompts);

// Draw order for weighted interleaving: each step picks among non-exhausted
// streams with positive weight with probability proportional to weight, taking
// that stream's next element. Zero-weight streams drain last, in listed order.
// Returns (stream, position) pairs. Throws kInvalidArgument for negative
// weights or a zero weight sum, kAllStreamsEmpty when there is nothing to mix.
std::vector<std::pair<std::size_t, std::size_t>> mix_order(std::span<const std::size_t> sizes,
                                                           std::span<const double> weights,
                                                           std::uint64_t seed);

template <typename T>
struct WeightedStream {
  std::vector<T> items;
  double weight = 1.0;
};

template <typename T>
std::vector<T> mix_replay(std::vector<WeightedStream<T>> streams, std::uint64_t seed) {
  std::vector<std::size_t> sizes;
  std::vector<double> weights;
  for (const auto& s : streams) {
    sizes.push_back(s.items.size());
    weights.push_back(s.weight);
  }
  std::vector<T> out;
  for (auto [stream, pos] : mix_order(sizes, weights, seed)) out.push_back(std::move(streams[stream].items[pos]));
  return out;
}

std::string_view role_name(Role r);
std::string_view origin_name(Origin o);

}  // namespace cytotext
