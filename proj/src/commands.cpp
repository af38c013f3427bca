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

#include "commands.hpp"

#include <thread>

#include "cytotext/config.hpp"
#include "cytotext/pipeline.hpp"
#include "cytotext/simulate.hpp"
#include "cytotext/transforms.hpp"
#include "log.hpp"
#include "text_util.hpp"

namespace fs = std::filesystem;

namespace cytotext {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kEmptyInput:
    case ErrorCode::kLexiconInvalid:
    case ErrorCode::kConfigInvalid:
    case ErrorCode::kTemplateInvalid:
    case ErrorCode::kManifestInvalid:
    case ErrorCode::kManifestHashMismatch:
    case ErrorCode::kCheckpointExists:
    case ErrorCode::kIo:
    case ErrorCode::kAuthMissing:
    case ErrorCode::kInsufficientRaters:
    case ErrorCode::kAllStreamsEmpty:
      return 2;
    case ErrorCode::kEmptyCaption:
    case ErrorCode::kShardWriteFailure:
    case ErrorCode::kNonRetryable:
    case ErrorCode::kExhaustedRetries:
    case ErrorCode::kCancelled:
    case ErrorCode::kInternal:
      return 1;
  }
  return 1;
}

namespace {

class SummaryBuilder {
 public:
  explicit SummaryBuilder(std::string command) : command_(std::move(command)), started_(utc_timestamp_now()) {}

  nlohmann::json& counts() { return counts_; }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void config_hash(std::string h) { config_hash_ = std::move(h); }
  void warning(std::string w) {
    log_message(LogLevel::kWarn, w);
    warnings_.push_back(std::move(w));
  }
  nlohmann::json& extra() { return extra_; }

  nlohmann::json build(int exit_code = 0) const {
    nlohmann::json j{{"command", command_},
                     {"started_at", started_},
                     {"finished_at", utc_timestamp_now()},
                     {"counts", counts_.is_null() ? nlohmann::json::object() : counts_},
                     {"outputs", outputs_},
                     {"config_hash", config_hash_.empty() ? nlohmann::json() : nlohmann::json(config_hash_)},
                     {"warnings", warnings_},
                     {"exit_code", exit_code}};
    for (const auto& [k, v] : extra_.items()) j[k] = v;
    return j;
  }

 private:
  std::string command_;
  std::string started_;
  nlohmann::json counts_ = nlohmann::json::object();
  std::vector<std::string> outputs_;
  std::string config_hash_;
  std::vector<std::string> warnings_;
  nlohmann::json extra_ = nlohmann::json::object();
};

ChatClient& client_of(const CommandContext& ctx) {
  if (!ctx.client) throw Error(ErrorCode::kInternal, "command context has no chat client");
  return *ctx.client;
}

fs::path directory_of(const fs::path& file) {
  auto parent = file.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw Error(ErrorCode::kIo, std::string(what) + " not found: " + p.string());
}

// Runs fn(i) for i in [0, n) on `width` threads.
void parallel_for(std::size_t n, int width, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < n;) {
      try {
        fn(k);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    auto threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(width, 1)), n);
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
}

std::vector<nlohmann::json> records_to_json(const std::vector<DatasetRecord>& records) {
  std::vector<nlohmann::json> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(to_json(r));
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<InstructionSample>& samples) {
  std::string text;
  for (const auto& s : samples) text += to_json(s).dump() + "\n";
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  atomic_write_file(path, text);
}

void check_distinct_dirs(const fs::path& in, const fs::path& out) {
  std::error_code ec;
  if (fs::exists(out) && fs::equivalent(in, out, ec)) {
    throw Error(ErrorCode::kInvalidArgument, "output directory must differ from the input dataset directory");
  }
}

}  // namespace

CommandOutput cmd_annotate(const AnnotateArgs& args, const CommandContext& ctx) {
  SummaryBuilder sb("annotate");
  auto config = load_config(args.config);
  require_file(args.manifest, "manifest");
  auto manifest = read_tile_manifest(args.manifest);

  RunOptions options;
  options.output_dir = args.output_dir;
  options.image_root = args.image_root.value_or(directory_of(args.manifest));
  options.resume = args.resume;
  options.cancel = ctx.cancel;
  options.clock = utc_timestamp_now;
  auto run = run_pipeline(manifest, config, client_of(ctx), options);

  sb.config_hash(run.config_hash);
  sb.counts() = {{"tiles", manifest.size()},
                 {"succeeded", run.succeeded},
                 {"failed", run.failed},
                 {"skipped", run.skipped}};
  for (const auto& p : run.shard_paths) sb.output(p);
  auto failures = nlohmann::json::array();
  for (const auto& f : run.failures) failures.push_back({{"tile_id", f.tile_id}, {"reason", f.reason}});
  sb.extra()["failures"] = std::move(failures);
  sb.extra()["manifest_hash"] = run.manifest_hash;
  sb.extra()["cancelled"] = run.cancelled;

  CommandOutput out;
  if (run.cancelled) {
    out.status = ErrorCode::kCancelled;
    out.summary = sb.build(1);
  } else {
    out.summary = sb.build();
  }
  return out;
}

CommandOutput cmd_fuse(const FuseArgs& args, const CommandContext& ctx) {
  SummaryBuilder sb("fuse");
  auto config = load_config(args.config);
  check_distinct_dirs(args.dataset_dir, args.output_dir);
  auto records = read_dataset(args.dataset_dir);
  const auto chash = config_hash(config);
  sb.config_hash(chash);

  std::vector<std::string> problems(records.size());
  std::vector<char> changed(records.size(), 0);
  parallel_for(records.size(), config.concurrency, [&](std::size_t k) {
    if (ctx.cancel && ctx.cancel->load()) throw Error(ErrorCode::kCancelled, "cancelled");
    auto& rec = records[k];
    std::vector<AnnotatorCaption> captions;
    std::vector<std::string> narratives;
    for (const auto& raw : rec.stage1_raw) {
      if (trim(raw.text).empty()) continue;
      captions.push_back({raw.endpoint_id, parse_structured_caption(raw.text, *config.lexicon)});
      narratives.push_back(raw.text);
    }
    if (captions.empty()) {
      problems[k] = rec.tile_id + ": no usable annotator replies, record kept unchanged";
      return;
    }
    auto fused = fuse_consensus(captions, config.fusion);
    fused.narrative =
        summarize_narrative(fused, narratives, config.fusion.integrator, ctx.client, config.prompts.integrator);
    changed[k] = !(fused.consensus == rec.fused.consensus && fused.missing_dimensions == rec.fused.missing_dimensions);
    rec.fused = std::move(fused);
    rec.final_description = final_from_fused(rec.fused);
    rec.pipeline_config_hash = chash;
  });

  std::size_t n_changed = 0;
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (!problems[k].empty()) sb.warning(problems[k]);
    n_changed += changed[k];
  }
  auto shards = write_shards(records_to_json(records), config.shard_size, args.output_dir);
  for (const auto& s : shards) sb.output(args.output_dir / s.file);
  sb.counts() = {{"records", records.size()}, {"consensus_changed", n_changed}};
  return {"", sb.build(), std::nullopt};
}

CommandOutput cmd_refine(const RefineArgs& args, const CommandContext& ctx) {
  SummaryBuilder sb("refine");
  auto config = load_config(args.config);
  auto expert = config.role(config.expert_id);
  if (!expert) throw Error(ErrorCode::kConfigInvalid, "refine needs an \"expert\" endpoint in the config");
  check_distinct_dirs(args.dataset_dir, args.output_dir);
  auto records = read_dataset(args.dataset_dir);
  sb.config_hash(config_hash(config));

  std::vector<std::string> problems(records.size());
  std::vector<char> refined(records.size(), 0);
  parallel_for(records.size(), config.concurrency, [&](std::size_t k) {
    if (ctx.cancel && ctx.cancel->load()) throw Error(ErrorCode::kCancelled, "cancelled");
    auto& rec = records[k];
    if (rec.fused.missing_dimensions.empty()) {
      rec.final_description = final_from_fused(rec.fused);
      return;
    }
    try {
      ImageTile tile;
      tile.tile_id = rec.tile_id;
      tile.uri = rec.image_uri;
      auto image = load_image_bytes(tile, args.image_root);
      rec.final_description = refine_expert(image, tile.media_type, rec.fused, *expert, *config.lexicon,
                                            client_of(ctx), config.prompts.expert_system, config.prompts.expert_user);
      refined[k] = 1;
    } catch (const Error& err) {
      if (err.code() == ErrorCode::kCancelled) throw;
      rec.final_description = final_from_fused(rec.fused);
      rec.final_description.warnings.push_back(std::string("expert stage failed: ") + err.what());
      problems[k] = rec.tile_id + ": expert stage failed: " + err.what();
    }
  });

  std::size_t n_refined = 0, n_failed = 0;
  for (std::size_t k = 0; k < records.size(); ++k) {
    if (!problems[k].empty()) {
      sb.warning(problems[k]);
      ++n_failed;
    }
    n_refined += refined[k];
  }
  auto shards = write_shards(records_to_json(records), config.shard_size, args.output_dir);
  for (const auto& s : shards) sb.output(args.output_dir / s.file);
  sb.counts() = {{"records", records.size()},
                 {"refined", n_refined},
                 {"unchanged", records.size() - n_refined - n_failed},
                 {"failed", n_failed}};
  return {"", sb.build(), std::nullopt};
}

CommandOutput cmd_reformat(const ReformatArgs& args, const CommandContext&) {
  SummaryBuilder sb("reformat");
  std::uint64_t seed = 0;
  if (args.config) {
    auto config = load_config(*args.config);
    seed = config.reformat_seed;
  }
  if (args.seed) seed = *args.seed;
  std::vector<DialogueTemplate> templates;
  if (args.templates) {
    require_file(*args.templates, "template file");
    try {
      templates = load_templates(*args.templates);
    } catch (const Error& err) {
      if (err.code() == ErrorCode::kIo) throw Error(ErrorCode::kTemplateInvalid, err.what());
      throw;
    }
  } else {
    templates = default_templates();
  }
  auto records = read_dataset(args.dataset_dir);
  auto result = reformat_instructions(records, templates, seed);
  for (auto& w : result.warnings) sb.warning(std::move(w));
  write_jsonl(args.output, result.samples);
  sb.output(args.output);
  std::size_t multi = 0;
  for (const auto& s : result.samples) {
    std::size_t users = 0;
    for (const auto& t : s.turns) users += t.role == Role::kUser;
    multi += users >= 2;
  }
  sb.counts() = {{"records", records.size()},
                 {"samples", result.samples.size()},
                 {"multi_turn", multi},
                 {"skipped", result.skipped}};
  sb.extra()["seed"] = seed;
  return {"", sb.build(), std::nullopt};
}

CommandOutput cmd_replay(const ReplayArgs& args, const CommandContext& ctx) {
  SummaryBuilder sb("replay");
  auto config = load_config(args.config);
  if (!args.domain_dataset && !args.general_manifest) {
    throw Error(ErrorCode::kInvalidArgument, "replay needs --domain and/or --general");
  }
  auto generator = config.role(config.generator_id);
  if (!generator) throw Error(ErrorCode::kConfigInvalid, "replay needs a \"generator\" endpoint in the config");
  auto weights = args.weights.value_or(std::pair{config.replay.domain_weight, config.replay.general_weight});
  if (weights.first < 0 || weights.second < 0 || !(weights.first + weights.second > 0)) {
    throw Error(ErrorCode::kInvalidArgument, "replay weights must be non-negative and not all zero");
  }
  const auto seed = args.seed.value_or(config.replay.seed);

  ReplayResult domain, general;
  if (args.domain_dataset) {
    auto records = read_dataset(*args.domain_dataset);
    domain = generate_domain_replay(records, *generator, client_of(ctx), config.prompts);
  }
  if (args.general_manifest) {
    require_file(*args.general_manifest, "general image manifest");
    auto images = read_tile_manifest(*args.general_manifest);
    general = generate_general_replay(images, args.general_image_root.value_or(directory_of(*args.general_manifest)),
                                      *generator, client_of(ctx), config.prompts);
  }
  for (auto* r : {&domain, &general}) {
    for (auto& w : r->warnings) sb.warning(std::move(w));
  }

  const auto n_domain = domain.samples.size(), n_general = general.samples.size();
  std::vector<InstructionSample> mixed;
  if (n_domain + n_general > 0) {
    std::vector<WeightedStream<InstructionSample>> streams;
    streams.push_back({std::move(domain.samples), weights.first});
    streams.push_back({std::move(general.samples), weights.second});
    mixed = mix_replay(std::move(streams), seed);
  } else {
    sb.warning("no replay samples were generated");
  }
  write_jsonl(args.output, mixed);
  sb.output(args.output);
  sb.config_hash(config_hash(config));
  sb.counts() = {{"domain_samples", n_domain},
                 {"general_samples", n_general},
                 {"mixed_samples", mixed.size()},
                 {"endpoint_failures", domain.endpoint_failures + general.endpoint_failures},
                 {"unparseable", domain.unparseable + general.unparseable},
                 {"skipped", domain.endpoint_failures + general.endpoint_failures + domain.unparseable +
                                 general.unparseable}};
  sb.extra()["generator_model"] = generator->model_name;
  sb.extra()["weights"] = {weights.first, weights.second};
  sb.extra()["seed"] = seed;
  return {"", sb.build(), std::nullopt};
}

CommandOutput cmd_eval(const EvalArgs& args, const CommandContext& ctx) {
  SummaryBuilder sb("eval");
  if (args.bench != "morpho" && args.bench != "tbs") {
    throw Error(ErrorCode::kInvalidArgument, "unknown bench kind '" + args.bench + "' (expected morpho or tbs)");
  }
  auto config = load_config(args.config);
  auto model_id = args.model_id ? args.model_id : config.model_id;
  if (!model_id) throw Error(ErrorCode::kConfigInvalid, "eval needs --model or a \"model\" endpoint in the config");
  const auto& model = config.endpoint(*model_id);
  require_file(args.manifest, "benchmark manifest");
  const auto text = read_text_file(args.manifest);
  EvalOptions options;
  options.image_root = args.image_root.value_or(directory_of(args.manifest));

  EvalReport report;
  if (args.bench == "morpho") {
    auto items = parse_morpho_manifest(text, args.manifest.string());
    report = evaluate_morpho(items, model, config.prompts, *config.lexicon, client_of(ctx), options);
  } else {
    auto items = parse_cyto_manifest(text, args.manifest.string());
    report = evaluate_tbs(items, model, config.prompts, client_of(ctx), options);
  }
  sb.config_hash(report.run_config_hash);
  sb.counts() = {{"items", report.n_items}, {"unparseable", report.n_unparseable}};
  sb.extra()["macro_average"] = report.macro_average ? nlohmann::json(*report.macro_average) : nlohmann::json();
  sb.extra()["bench"] = args.bench;
  sb.extra()["model"] = model.model_name;
  return {render_report(report, ctx.format), sb.build(), std::nullopt};
}

CommandOutput cmd_agreement(const AgreementArgs& args, const CommandContext& ctx) {
  SummaryBuilder sb("agreement");
  if (args.rater_files.size() < 2) {
    throw Error(ErrorCode::kInsufficientRaters,
                "agreement needs at least 2 rater files, got " + std::to_string(args.rater_files.size()));
  }
  require_file(args.manifest, "benchmark manifest");
  auto items = parse_morpho_manifest(read_text_file(args.manifest), args.manifest.string());
  std::vector<RaterAnnotations> raters;
  for (const auto& f : args.rater_files) {
    require_file(f, "rater file");
    raters.push_back(parse_rater_file(read_text_file(f), f.stem().string(), f.string()));
  }
  auto report = inter_rater_agreement(raters, items);
  std::size_t annotations = 0;
  for (const auto& r : raters) annotations += r.verdicts.size();
  sb.counts() = {{"raters", raters.size()}, {"items", items.size()}, {"annotations", annotations}};
  sb.extra()["average_agreement"] = report.average ? nlohmann::json(*report.average) : nlohmann::json();
  return {render_agreement(report, ctx.format), sb.build(), std::nullopt};
}

CommandOutput cmd_simulate(const SimulateArgs& args, const CommandContext& ctx) {
  SummaryBuilder sb("simulate");
  require_file(args.trial_config, "trial config");
  auto j = nlohmann::json::parse(read_text_file(args.trial_config), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kConfigInvalid, args.trial_config.string() + ": not valid JSON");
  TrialConfig trial;
  try {
    trial = trial_config_from_json(j);
  } catch (const Error& err) {
    throw Error(err.code(), args.trial_config.string() + ": " + err.what());
  }
  auto result = run_fusion_trial(trial);
  sb.counts() = {{"cases", result.n_cases}, {"annotators", trial.profiles.size()}};
  sb.extra()["fused_mean_accuracy"] = result.fused_mean();
  sb.extra()["oracle_fused_accuracy"] = result.oracle ? nlohmann::json(*result.oracle) : nlohmann::json();
  return {render_trial(result, ctx.format), sb.build(), std::nullopt};
}

}  // namespace cytotext
