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

#include "cytotext/transforms.hpp"

#include <atomic>
#include <regex>
#include <thread>

#include "log.hpp"
#include "text_util.hpp"

namespace cytotext {

std::string_view role_name(Role r) {
  switch (r) {
    case Role::kSystem: return "system";
    case Role::kUser: return "user";
    case Role::kAssistant: return "assistant";
  }
  return "user";
}

std::string_view origin_name(Origin o) {
  switch (o) {
    case Origin::kReformatted: return "reformatted";
    case Origin::kDomainReplay: return "domain_replay";
    case Origin::kGeneralReplay: return "general_replay";
  }
  return "reformatted";
}

namespace {

Role role_from_name(const std::string& s) {
  if (s == "system") return Role::kSystem;
  if (s == "user") return Role::kUser;
  if (s == "assistant") return Role::kAssistant;
  throw Error(ErrorCode::kTemplateInvalid, "unknown role '" + s + "'");
}

Origin origin_from_name(const std::string& s) {
  if (s == "reformatted") return Origin::kReformatted;
  if (s == "domain_replay") return Origin::kDomainReplay;
  if (s == "general_replay") return Origin::kGeneralReplay;
  throw Error(ErrorCode::kInvalidArgument, "unknown origin '" + s + "'");
}

// Returns the violation, or empty when roles follow
// [system] user assistant (user assistant)* and end on an assistant turn.
std::string check_turns(const std::vector<Turn>& turns, std::size_t* exchanges) {
  std::size_t i = 0;
  if (!turns.empty() && turns[0].role == Role::kSystem) ++i;
  std::size_t n = 0;
  for (; i < turns.size(); i += 2) {
    if (turns[i].role != Role::kUser) return "turn " + std::to_string(i) + " must be a user turn";
    if (i + 1 >= turns.size()) return "dialogue must end with an assistant turn";
    if (turns[i + 1].role != Role::kAssistant) return "turn " + std::to_string(i + 1) + " must be an assistant turn";
    ++n;
  }
  if (n == 0) return "dialogue needs at least one user/assistant exchange";
  if (exchanges) *exchanges = n;
  return {};
}

const std::regex& placeholder_re() {
  static const std::regex re(R"(\{([a-z_]+)(?::([A-Za-z]+))?\})");
  return re;
}

}  // namespace

std::vector<std::string> validate_sample(const InstructionSample& s) {
  std::vector<std::string> out;
  if (auto why = check_turns(s.turns, nullptr); !why.empty()) out.push_back(why);
  if (s.modality == Modality::kVisionText && !s.image_ref) out.push_back("vision sample without image_ref");
  if (s.modality == Modality::kTextOnly && s.image_ref) out.push_back("text-only sample with image_ref");
  if (s.sample_id.empty()) out.push_back("empty sample_id");
  return out;
}

nlohmann::json to_json(const InstructionSample& s) {
  auto messages = nlohmann::json::array();
  for (const auto& t : s.turns) messages.push_back({{"role", role_name(t.role)}, {"content", t.text}});
  nlohmann::json j{{"id", s.sample_id},
                   {"messages", std::move(messages)},
                   {"modality", s.modality == Modality::kVisionText ? "vision_text" : "text_only"},
                   {"template_id", s.template_id},
                   {"origin", origin_name(s.origin)}};
  j["image_ref"] = s.image_ref ? nlohmann::json(*s.image_ref) : nlohmann::json();
  j["images"] = s.image_uri ? nlohmann::json::array({*s.image_uri}) : nlohmann::json::array();
  if (!s.generator_model.empty()) j["generator_model"] = s.generator_model;
  return j;
}

InstructionSample sample_from_json(const nlohmann::json& j) {
  InstructionSample s;
  s.sample_id = j.at("id").get<std::string>();
  for (const auto& m : j.at("messages")) s.turns.push_back({role_from_name(m.at("role")), m.at("content")});
  s.modality = j.value("modality", std::string("vision_text")) == "text_only" ? Modality::kTextOnly
                                                                             : Modality::kVisionText;
  if (j.contains("image_ref") && !j.at("image_ref").is_null()) s.image_ref = j.at("image_ref").get<std::string>();
  if (j.contains("images") && !j.at("images").empty()) s.image_uri = j.at("images")[0].get<std::string>();
  s.template_id = j.value("template_id", std::string{});
  s.origin = origin_from_name(j.value("origin", std::string("reformatted")));
  s.generator_model = j.value("generator_model", std::string{});
  return s;
}

// --- templates ----------------------------------------------------------------

void validate(const DialogueTemplate& t) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kTemplateInvalid, "template '" + t.template_id + "': " + what);
  };
  if (t.template_id.empty()) throw Error(ErrorCode::kTemplateInvalid, "template without template_id");
  std::size_t exchanges = 0;
  if (auto why = check_turns(t.turns, &exchanges); !why.empty()) fail(why);
  if (t.multi_turn && exchanges < 2) fail("multi_turn template needs at least 2 exchanges");
  if (!t.multi_turn && exchanges != 1) fail("single-turn template must have exactly 1 exchange");
  static const std::set<std::string> kPlain{"narrative", "findings", "tbs_categories", "focus_name",
                                            "focus_label", "focus_options"};
  for (const auto& turn : t.turns) {
    for (std::sregex_iterator it(turn.text.begin(), turn.text.end(), placeholder_re()), end; it != end; ++it) {
      const auto name = (*it)[1].str();
      const auto arg = (*it)[2].str();
      if ((*it)[2].matched) {
        if (name != "assertion" && name != "dimension") fail("placeholder {" + name + ":...} takes no argument");
        if (!dimension_from_code(arg)) fail("unknown dimension code '" + arg + "'");
      } else if (!kPlain.contains(name)) {
        fail("unknown placeholder {" + name + "}");
      }
    }
  }
}

DialogueTemplate template_from_json(const nlohmann::json& j) {
  DialogueTemplate t;
  try {
    t.template_id = j.at("template_id").get<std::string>();
    t.multi_turn = j.value("multi_turn", false);
    for (const auto& turn : j.at("turns")) {
      t.turns.push_back({role_from_name(turn.at("role").get<std::string>()), turn.at("text").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kTemplateInvalid, std::string("malformed template: ") + ex.what());
  }
  validate(t);
  return t;
}

std::vector<DialogueTemplate> parse_templates(std::string_view text, std::string_view source) {
  std::vector<DialogueTemplate> out;
  std::set<std::string> ids;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto line = trim(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    start = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    auto where = std::string(source) + ":" + std::to_string(line_no);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::kTemplateInvalid, where + ": not valid JSON");
    try {
      out.push_back(template_from_json(j));
    } catch (const Error& err) {
      throw Error(ErrorCode::kTemplateInvalid, where + ": " + err.what());
    }
    if (!ids.insert(out.back().template_id).second) {
      throw Error(ErrorCode::kTemplateInvalid, where + ": duplicate template_id");
    }
  }
  if (out.empty()) throw Error(ErrorCode::kTemplateInvalid, std::string(source) + ": no templates");
  return out;
}

std::vector<DialogueTemplate> load_templates(const std::filesystem::path& path) {
  return parse_templates(read_text_file(path), path.string());
}

std::vector<DialogueTemplate> default_templates() {
  const char* kSystem = "You are a cytopathology assistant specialised in cervical cytology.";
  return {
      {"describe",
       {{Role::kSystem, kSystem},
        {Role::kUser, "Describe the morphology of the cell in this image."},
        {Role::kAssistant, "{narrative}"}},
       false},
      {"findings",
       {{Role::kSystem, kSystem},
        {Role::kUser, "List the key morphological observations for this cell."},
        {Role::kAssistant, "{findings}"}},
       false},
      {"describe_then_focus",
       {{Role::kSystem, kSystem},
        {Role::kUser, "Describe the morphology of the cell in this image."},
        {Role::kAssistant, "{narrative}"},
        {Role::kUser, "What about the {focus_name}? Is it {focus_options}?"},
        {Role::kAssistant, "The {focus_name} is {focus_label}."}},
       true},
  };
}

namespace {

struct Resolver {
  const DatasetRecord& record;
  std::optional<MorphDimension> focus;

  // nullopt when the record cannot supply the placeholder.
  std::optional<std::string> value(const std::string& name, const std::string& arg) const {
    const auto& fin = record.final_description;
    if (name == "narrative") {
      if (trim(fin.narrative).empty()) return std::nullopt;
      return fin.narrative;
    }
    if (name == "findings") {
      if (fin.assertions.empty()) return std::nullopt;
      std::vector<std::string> lines;
      for (const auto& [d, a] : fin.assertions) {
        lines.push_back("- " + std::string(info(d).display_name) + ": " + std::string(polarity_label(d, a.verdict)));
      }
      return join(lines, "\n");
    }
    if (name == "tbs_categories") {
      std::vector<std::string> codes;
      for (const auto& c : kTbsCategories) codes.emplace_back(c.code);
      return join(codes, ", ");
    }
    if (name == "dimension") return std::string(info(*dimension_from_code(arg)).display_name);
    if (name == "assertion") {
      auto d = *dimension_from_code(arg);
      auto it = fin.assertions.find(d);
      if (it == fin.assertions.end()) return std::nullopt;
      return std::string(polarity_label(d, it->second.verdict));
    }
    if (!focus) return std::nullopt;
    if (name == "focus_name") return to_lower(info(*focus).display_name);
    if (name == "focus_label") return std::string(polarity_label(*focus, fin.assertions.at(*focus).verdict));
    if (name == "focus_options") {
      return std::string(info(*focus).positive_label) + " or " + std::string(info(*focus).negative_label);
    }
    return std::nullopt;
  }

  std::optional<std::string> fill(const std::string& text) const {
    std::string out;
    std::size_t last = 0;
    for (std::sregex_iterator it(text.begin(), text.end(), placeholder_re()), end; it != end; ++it) {
      auto v = value((*it)[1].str(), (*it)[2].str());
      if (!v) return std::nullopt;
      out.append(text, last, static_cast<std::size_t>(it->position()) - last);
      out += *v;
      last = static_cast<std::size_t>(it->position() + it->length());
    }
    out.append(text, last);
    return out;
  }

  std::optional<std::vector<Turn>> fill(const DialogueTemplate& t) const {
    std::vector<Turn> turns;
    for (const auto& turn : t.turns) {
      auto text = fill(turn.text);
      if (!text) return std::nullopt;
      turns.push_back({turn.role, std::move(*text)});
    }
    return turns;
  }
};

}  // namespace

ReformatResult reformat_instructions(std::span<const DatasetRecord> records,
                                     std::span<const DialogueTemplate> templates, std::uint64_t seed) {
  if (templates.empty()) throw Error(ErrorCode::kTemplateInvalid, "no dialogue templates given");
  for (const auto& t : templates) validate(t);

  ReformatResult out;
  for (const auto& record : records) {
    Rng rng(derive_seed(seed, record.tile_id));
    std::optional<MorphDimension> focus;
    const auto& asserted = record.final_description.assertions;
    if (!asserted.empty()) {
      auto it = asserted.begin();
      std::advance(it, static_cast<long>(uniform_below(rng, asserted.size())));
      focus = it->first;
    }
    Resolver resolver{record, focus};

    std::vector<std::pair<const DialogueTemplate*, std::vector<Turn>>> eligible;
    for (const auto& t : templates) {
      if (auto turns = resolver.fill(t)) eligible.emplace_back(&t, std::move(*turns));
    }
    if (eligible.empty()) {
      ++out.skipped;
      out.warnings.push_back("record " + record.tile_id + ": no template has all placeholders resolvable");
      continue;
    }
    auto& [tmpl, turns] = eligible[uniform_below(rng, eligible.size())];
    InstructionSample s;
    s.sample_id = record.tile_id + ":" + tmpl->template_id;
    s.modality = Modality::kVisionText;
    s.image_ref = record.tile_id;
    if (!record.image_uri.empty()) s.image_uri = record.image_uri;
    s.turns = std::move(turns);
    s.template_id = tmpl->template_id;
    s.origin = Origin::kReformatted;
    out.samples.push_back(std::move(s));
  }
  return out;
}

// --- replay -------------------------------------------------------------------

std::optional<QaPairs> parse_qa_pairs(std::string_view reply) {
  struct Marker {
    char kind;
    std::size_t begin;  // marker start
    std::size_t body;   // text after "Q:"
  };
  std::vector<Marker> markers;
  for (std::size_t i = 0; i + 1 < reply.size(); ++i) {
    char c = reply[i];
    if ((c == 'Q' || c == 'A') && reply[i + 1] == ':' &&
        (i == 0 || std::isspace(static_cast<unsigned char>(reply[i - 1])))) {
      markers.push_back({c, i, i + 2});
    }
  }
  if (markers.empty() || markers.size() % 2 != 0) return std::nullopt;
  if (!trim(reply.substr(0, markers[0].begin)).empty()) return std::nullopt;
  QaPairs out;
  for (std::size_t m = 0; m < markers.size(); m += 2) {
    if (markers[m].kind != 'Q' || markers[m + 1].kind != 'A') return std::nullopt;
    auto q = trim(reply.substr(markers[m].body, markers[m + 1].begin - markers[m].body));
    auto a_end = m + 2 < markers.size() ? markers[m + 2].begin : reply.size();
    auto a = trim(reply.substr(markers[m + 1].body, a_end - markers[m + 1].body));
    if (q.empty() || a.empty()) return std::nullopt;
    out.emplace_back(std::string(q), std::string(a));
  }
  return out;
}

namespace {

struct ReplayJob {
  std::string id;
  std::string prompt;
  std::function<std::string()> image;  // empty for text-only
  std::string media_type;
  std::optional<std::string> image_uri;
};

ReplayResult run_replay(std::vector<ReplayJob> jobs, Origin origin, const EndpointConfig& generator,
                        ChatClient& client, const std::string& system_prompt) {
  std::vector<std::optional<InstructionSample>> slots(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::vector<char> unparseable(jobs.size(), 0);
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
      const auto& job = jobs[k];
      try {
        std::string image = job.image ? job.image() : std::string{};
        auto resp = client.send_chat(generator, make_request(generator, system_prompt, job.prompt, image, job.media_type));
        auto pairs = parse_qa_pairs(resp.text);
        if (!pairs) {
          unparseable[k] = 1;
          continue;
        }
        InstructionSample s;
        s.sample_id = std::string(origin_name(origin)) + ":" + job.id;
        s.modality = job.image ? Modality::kVisionText : Modality::kTextOnly;
        if (job.image) {
          s.image_ref = job.id;
          s.image_uri = job.image_uri;
        }
        for (auto& [q, a] : *pairs) {
          s.turns.push_back({Role::kUser, std::move(q)});
          s.turns.push_back({Role::kAssistant, std::move(a)});
        }
        s.template_id = origin == Origin::kDomainReplay ? "replay_domain" : "replay_general";
        s.origin = origin;
        s.generator_model = generator.model_name;
        slots[k] = std::move(s);
      } catch (const std::exception& ex) {
        errors[k] = ex.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(generator.max_in_flight), jobs.size());
    for (std::size_t i = 0; i < n; ++i) pool.emplace_back(work);
  }

  ReplayResult out;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    if (slots[k]) {
      out.samples.push_back(std::move(*slots[k]));
    } else if (unparseable[k]) {
      ++out.unparseable;
      out.warnings.push_back(jobs[k].id + ": generator reply has no Q:/A: pairs");
    } else {
      ++out.endpoint_failures;
      out.warnings.push_back(jobs[k].id + ": " + errors[k]);
    }
  }
  for (const auto& w : out.warnings) log_message(LogLevel::kDebug, "replay: " + w);
  return out;
}

}  // namespace

ReplayResult generate_domain_replay(std::span<const DatasetRecord> records, const EndpointConfig& generator,
                                    ChatClient& client, const PromptSet& prompts) {
  std::vector<ReplayJob> jobs;
  for (const auto& r : records) {
    jobs.push_back({r.tile_id, replace_all(prompts.replay_domain, "{narrative}", r.final_description.narrative),
                    {}, "", std::nullopt});
  }
  return run_replay(std::move(jobs), Origin::kDomainReplay, generator, client, "");
}

ReplayResult generate_general_replay(std::span<const ImageTile> images, const std::filesystem::path& image_root,
                                     const EndpointConfig& generator, ChatClient& client,
                                     const PromptSet& prompts) {
  std::vector<ReplayJob> jobs;
  for (const auto& t : images) {
    jobs.push_back({t.tile_id, prompts.replay_general, [t, image_root] { return load_image_bytes(t, image_root); },
                    t.media_type, t.uri});
  }
  return run_replay(std::move(jobs), Origin::kGeneralReplay, generator, client, "");
}

std::vector<std::pair<std::size_t, std::size_t>> mix_order(std::span<const std::size_t> sizes,
                                                           std::span<const double> weights, std::uint64_t seed) {
  if (sizes.size() != weights.size()) throw Error(ErrorCode::kInvalidArgument, "one weight per stream required");
  double weight_sum = 0.0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (!(weights[i] >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "stream weights must be non-negative");
    weight_sum += weights[i];
    total += sizes[i];
  }
  if (!(weight_sum > 0.0)) throw Error(ErrorCode::kInvalidArgument, "stream weights must sum to a positive value");
  if (total == 0) throw Error(ErrorCode::kAllStreamsEmpty, "all replay streams are empty");

  Rng rng(seed);
  std::vector<std::size_t> cursor(sizes.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(total);
  while (true) {
    double live = 0.0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (weights[i] > 0.0 && cursor[i] < sizes[i]) live += weights[i];
    }
    if (live == 0.0) break;
    double u = uniform01(rng) * live;
    std::size_t pick = sizes.size();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (!(weights[i] > 0.0 && cursor[i] < sizes[i])) continue;
      pick = i;  // last live stream absorbs rounding at the top end
      if (u < weights[i]) break;
      u -= weights[i];
    }
    out.emplace_back(pick, cursor[pick]++);
  }
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    while (cursor[i] < sizes[i]) out.emplace_back(i, cursor[i]++);
  }
  return out;
}

}  // namespace cytotext
