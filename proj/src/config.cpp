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

#include "cytotext/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "cytotext/digest.hpp"
#include "cytotext/error.hpp"

namespace cytotext {

PromptSet PromptSet::defaults() {
  PromptSet p;
  p.annotator_system =
      "You are an experienced cytopathologist describing image tiles from cervical "
      "liquid-based cytology slides.";
  p.annotator_user =
      "Describe the cell shown in this image. Address each of the following morphological "
      "observations explicitly, stating which of the two options applies:\n"
      "{dimension_list}\n"
      "Finish with a short overall summary.";
  p.integrator =
      "Several annotators described the same cervical cytology image.\n\n"
      "Findings agreed by the majority of annotators:\n{consensus_table}\n"
      "Original annotator descriptions:\n{narratives}\n"
      "Write a single fluent, well-structured paragraph describing the cell. Include only the "
      "agreed findings listed above and do not add findings that are not listed.";
  p.expert_system = "You are a cervical cytopathology expert.";
  p.expert_user =
      "The following description was produced for this image tile:\n\n{fused_narrative}\n\n"
      "These observations are still undetermined: {missing_dimensions}.\n"
      "Examine the image and describe each undetermined observation in one sentence.";
  p.bench_system = "You are a cytopathology assistant. Answer concisely.";
  p.morpho_question =
      "Look at the cell in this image. Regarding {dimension_name}: is it {positive_label} or "
      "{negative_label}? Answer \"Yes\" if it is {positive_label} and \"No\" if it is "
      "{negative_label}.";
  p.tbs_question =
      "Classify the cell in this image according to The Bethesda System. Choose exactly one "
      "category: {tbs_options}. Answer with the category code only.";
  p.replay_domain =
      "Here is a description of a cervical cytology image:\n\n{narrative}\n\n"
      "Write question-answer pairs about this description. Start each question on a new line "
      "with \"Q:\" and each answer on a new line with \"A:\".";
  p.replay_general =
      "Look at this image and write question-answer pairs about its content. Start each "
      "question on a new line with \"Q:\" and each answer on a new line with \"A:\".";
  return p;
}

std::string render_dimension_list() {
  std::string out;
  for (const auto& d : kDimensions) {
    out += "- " + std::string(d.display_name) + " (" + std::string(d.positive_label) + " / " +
           std::string(d.negative_label) + ")\n";
  }
  return out;
}

std::string render_tbs_options() {
  std::string out;
  for (const auto& c : kTbsCategories) {
    if (!out.empty()) out += ", ";
    out += std::string(c.code) + " (" + std::string(c.display_name) + ")";
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const EndpointConfig& PipelineConfig::endpoint(const std::string& id) const {
  for (const auto& e : endpoints) {
    if (e.id == id) return e;
  }
  throw Error(ErrorCode::kConfigInvalid, "no endpoint with id '" + id + "'");
}

std::vector<EndpointConfig> PipelineConfig::annotators() const {
  std::vector<EndpointConfig> out;
  for (const auto& id : annotator_ids) out.push_back(endpoint(id));
  return out;
}

std::optional<EndpointConfig> PipelineConfig::role(const std::optional<std::string>& id) const {
  if (!id) return std::nullopt;
  return endpoint(*id);
}

namespace {

const std::set<std::string> kTopLevelKeys{
    "endpoints", "annotators", "integrator", "expert", "generator", "model", "prompts",
    "prompt_files", "lexicon", "fusion", "shard_size", "concurrency", "fixed_created_at",
    "replay", "reformat"};

std::string* prompt_slot(PromptSet& p, const std::string& name) {
  if (name == "annotator_system") return &p.annotator_system;
  if (name == "annotator_user") return &p.annotator_user;
  if (name == "integrator") return &p.integrator;
  if (name == "expert_system") return &p.expert_system;
  if (name == "expert_user") return &p.expert_user;
  if (name == "bench_system") return &p.bench_system;
  if (name == "morpho_question") return &p.morpho_question;
  if (name == "tbs_question") return &p.tbs_question;
  if (name == "replay_domain") return &p.replay_domain;
  if (name == "replay_general") return &p.replay_general;
  return nullptr;
}

std::optional<std::string> optional_id(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

}  // namespace

PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::kConfigInvalid, "config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!kTopLevelKeys.contains(key)) throw Error(ErrorCode::kConfigInvalid, "unknown config key '" + key + "'");
  }

  PipelineConfig c;
  c.base_dir = base_dir;
  try {
    std::set<std::string> ids;
    for (const auto& e : j.value("endpoints", nlohmann::json::array())) {
      auto ep = endpoint_from_json(e);
      if (!ids.insert(ep.id).second) throw Error(ErrorCode::kConfigInvalid, "duplicate endpoint id '" + ep.id + "'");
      c.endpoints.push_back(std::move(ep));
    }
    c.annotator_ids = j.value("annotators", std::vector<std::string>{});
    c.integrator_id = optional_id(j, "integrator");
    c.expert_id = optional_id(j, "expert");
    c.generator_id = optional_id(j, "generator");
    c.model_id = optional_id(j, "model");

    for (const auto& [name, text] : j.value("prompts", nlohmann::json::object()).items()) {
      auto* slot = prompt_slot(c.prompts, name);
      if (!slot) throw Error(ErrorCode::kConfigInvalid, "unknown prompt '" + name + "'");
      *slot = text.get<std::string>();
    }
    for (const auto& [name, file] : j.value("prompt_files", nlohmann::json::object()).items()) {
      auto* slot = prompt_slot(c.prompts, name);
      if (!slot) throw Error(ErrorCode::kConfigInvalid, "unknown prompt '" + name + "'");
      *slot = read_text_file(base_dir / file.get<std::string>());
    }
    if (j.contains("lexicon") && !j.at("lexicon").is_null()) {
      c.lexicon = std::make_shared<Lexicon>(Lexicon::load(base_dir / j.at("lexicon").get<std::string>()));
    }
    if (j.contains("fusion")) c.fusion = policy_from_json(j.at("fusion"));

    auto shard_size = j.value("shard_size", std::int64_t{1000});
    if (shard_size < 1) throw Error(ErrorCode::kConfigInvalid, "shard_size must be >= 1");
    c.shard_size = static_cast<std::size_t>(shard_size);
    c.concurrency = j.value("concurrency", 4);
    if (c.concurrency < 1) throw Error(ErrorCode::kConfigInvalid, "concurrency must be >= 1");
    c.fixed_created_at = optional_id(j, "fixed_created_at");

    if (j.contains("replay")) {
      const auto& r = j.at("replay");
      c.replay.domain_weight = r.value("domain_weight", 1.0);
      c.replay.general_weight = r.value("general_weight", 1.0);
      c.replay.seed = r.value("seed", std::uint64_t{0});
      if (c.replay.domain_weight < 0 || c.replay.general_weight < 0) {
        throw Error(ErrorCode::kConfigInvalid, "replay weights must be non-negative");
      }
    }
    if (j.contains("reformat")) c.reformat_seed = j.at("reformat").value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kConfigInvalid, std::string("malformed config: ") + ex.what());
  } catch (const Error& err) {
    if (err.code() == ErrorCode::kLexiconInvalid || err.code() == ErrorCode::kIo) {
      throw Error(ErrorCode::kConfigInvalid, err.what());
    }
    throw;
  }

  for (const auto& id : c.annotator_ids) (void)c.endpoint(id);
  for (const auto* role : {&c.integrator_id, &c.expert_id, &c.generator_id, &c.model_id}) {
    if (*role) (void)c.endpoint(**role);
  }
  c.fusion.integrator = c.role(c.integrator_id);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::kIo, "config file not found: " + path.string());
  auto text = read_text_file(path);
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kConfigInvalid, path.string() + ": not valid JSON");
  try {
    return config_from_json(j, path.parent_path().empty() ? "." : path.parent_path());
  } catch (const Error& err) {
    throw Error(err.code(), path.string() + ": " + err.what());
  }
}

std::string config_hash(const PipelineConfig& c) {
  auto model_of = [&](const std::optional<std::string>& id) -> nlohmann::json {
    if (!id) return nullptr;
    return c.endpoint(*id).model_name;
  };
  auto annotator_models = nlohmann::json::array();
  for (const auto& id : c.annotator_ids) annotator_models.push_back(c.endpoint(id).model_name);
  const auto& p = c.prompts;
  nlohmann::json canonical{
      {"prompts",
       {{"annotator_system", p.annotator_system},
        {"annotator_user", p.annotator_user},
        {"integrator", p.integrator},
        {"expert_system", p.expert_system},
        {"expert_user", p.expert_user},
        {"bench_system", p.bench_system},
        {"morpho_question", p.morpho_question},
        {"tbs_question", p.tbs_question},
        {"replay_domain", p.replay_domain},
        {"replay_general", p.replay_general}}},
      {"lexicon", c.lexicon->to_text()},
      {"fusion", to_json(c.fusion)},
      {"models",
       {{"annotators", annotator_models},
        {"integrator", model_of(c.integrator_id)},
        {"expert", model_of(c.expert_id)}}}};
  return sha256_hex(canonical.dump());
}

}  // namespace cytotext
