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

#include "cytotext/cytotext.h"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>

#include "commands.hpp"
#include "cytotext/fusion.hpp"
#include "cytotext/lexicon.hpp"
#include "log.hpp"

using namespace cytotext;

struct cyt_context {
  std::atomic<bool> cancel{false};
  std::unique_ptr<ChatClient> client = std::make_unique<ChatClient>();
  std::string last_error;
};

struct cyt_result {
  std::string summary;
  std::string report;
};

namespace {

cyt_status to_status(ErrorCode code) { return static_cast<cyt_status>(static_cast<int>(code) + 1); }

// Runs `fn`, translating exceptions into a status and ctx->last_error.
template <typename Fn>
cyt_status guarded(cyt_context* ctx, Fn&& fn) {
  if (!ctx) return CYT_E_INVALID_ARGUMENT;
  ctx->last_error.clear();
  try {
    return fn();
  } catch (const Error& err) {
    ctx->last_error = err.what();
    return to_status(err.code());
  } catch (const std::bad_alloc&) {
    ctx->last_error = "out of memory";
  } catch (const std::exception& ex) {
    ctx->last_error = ex.what();
  } catch (...) {
    ctx->last_error = "unknown error";
  }
  return CYT_E_INTERNAL;
}

std::filesystem::path required(const char* s, const char* what) {
  if (!s || !*s) throw Error(ErrorCode::kInvalidArgument, std::string(what) + " is required");
  return s;
}

std::optional<std::filesystem::path> optional_path(const char* s) {
  if (!s || !*s) return std::nullopt;
  return std::filesystem::path(s);
}

ReportFormat to_format(cyt_format f) { return f == CYT_FORMAT_JSON ? ReportFormat::kJson : ReportFormat::kTable; }

template <typename Args>
cyt_status run_command(cyt_context* ctx, cyt_result** out, cyt_format format,
                       CommandOutput (*cmd)(const Args&, const CommandContext&), Args args) {
  if (!out) return CYT_E_INVALID_ARGUMENT;
  *out = nullptr;
  ctx->cancel = false;
  CommandContext cc{ctx->client.get(), &ctx->cancel, to_format(format)};
  auto output = cmd(args, cc);
  auto* r = new cyt_result{output.summary.dump(2), std::move(output.report)};
  *out = r;
  if (output.status) {
    ctx->last_error = std::string(error_code_name(*output.status));
    return to_status(*output.status);
  }
  return CYT_OK;
}

char* dup_string(const std::string& s) {
  auto* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

}  // namespace

extern "C" {

const char* cyt_version(void) { return "0.1.0"; }

const char* cyt_status_name(cyt_status status) {
  if (status == CYT_OK) return "Ok";
  if (status < CYT_E_INVALID_ARGUMENT || status > CYT_E_INTERNAL) return "Unknown";
  // error_code_name returns views of string literals, which are NUL-terminated.
  return error_code_name(static_cast<ErrorCode>(static_cast<int>(status) - 1)).data();
}

int cyt_status_exit_code(cyt_status status) {
  if (status == CYT_OK) return 0;
  if (status < CYT_E_INVALID_ARGUMENT || status > CYT_E_INTERNAL) return 1;
  return exit_code_for(static_cast<ErrorCode>(static_cast<int>(status) - 1));
}

cyt_status cyt_context_create(cyt_context** out) {
  if (!out) return CYT_E_INVALID_ARGUMENT;
  try {
    *out = new cyt_context();
    return CYT_OK;
  } catch (...) {
    *out = nullptr;
    return CYT_E_INTERNAL;
  }
}

void cyt_context_destroy(cyt_context* ctx) { delete ctx; }

const char* cyt_context_last_error(const cyt_context* ctx) { return ctx ? ctx->last_error.c_str() : ""; }

void cyt_context_cancel(cyt_context* ctx) {
  if (ctx) ctx->cancel.store(true);
}

void cyt_set_log_callback(cyt_log_fn fn, void* user, cyt_log_level threshold) {
  if (!fn) {
    set_log_sink(nullptr, LogLevel::kError);
    return;
  }
  set_log_sink(
      [fn, user](LogLevel level, std::string_view message) {
        std::string m(message);
        fn(static_cast<cyt_log_level>(level), m.c_str(), user);
      },
      static_cast<LogLevel>(threshold));
}

const char* cyt_result_summary_json(const cyt_result* result) { return result ? result->summary.c_str() : ""; }
const char* cyt_result_report(const cyt_result* result) { return result ? result->report.c_str() : ""; }
void cyt_result_destroy(cyt_result* result) { delete result; }

cyt_status cyt_annotate(cyt_context* ctx, const cyt_annotate_options* o, cyt_result** out) {
  return guarded(ctx, [&] {
    if (!o) throw Error(ErrorCode::kInvalidArgument, "options are required");
    AnnotateArgs a{required(o->config_path, "config path"), required(o->manifest_path, "manifest path"),
                   required(o->output_dir, "output directory"), optional_path(o->image_root), o->resume != 0};
    return run_command(ctx, out, CYT_FORMAT_TABLE, &cmd_annotate, a);
  });
}

cyt_status cyt_fuse(cyt_context* ctx, const cyt_fuse_options* o, cyt_result** out) {
  return guarded(ctx, [&] {
    if (!o) throw Error(ErrorCode::kInvalidArgument, "options are required");
    FuseArgs a{required(o->config_path, "config path"), required(o->dataset_dir, "dataset directory"),
               required(o->output_dir, "output directory")};
    return run_command(ctx, out, CYT_FORMAT_TABLE, &cmd_fuse, a);
  });
}

cyt_status cyt_refine(cyt_context* ctx, const cyt_refine_options* o, cyt_result** out) {
  return guarded(ctx, [&] {
    if (!o) throw Error(ErrorCode::kInvalidArgument, "options are required");
    RefineArgs a{required(o->config_path, "config path"), required(o->dataset_dir, "dataset directory"),
                 required(o->output_dir, "output directory"), optional_path(o->image_root).value_or(".")};
    return run_command(ctx, out, CYT_FORMAT_TABLE, &cmd_refine, a);
  });
}

cyt_status cyt_reformat(cyt_context* ctx, const cyt_reformat_options* o, cyt_result** out) {
  return guarded(ctx, [&] {
    if (!o) throw Error(ErrorCode::kInvalidArgument, "options are required");
    ReformatArgs a;
    a.config = optional_path(o->config_path);
    a.dataset_dir = required(o->dataset_dir, "dataset directory");
    a.templates = optional_path(o->templates_path);
    if (o->has_seed) a.seed = o->seed;
    a.output = required(o->output_path, "output path");
    return run_command(ctx, out, CYT_FORMAT_TABLE, &cmd_reformat, a);
  });
}

cyt_status cyt_replay(cyt_context* ctx, const cyt_replay_options* o, cyt_result** out) {
  return guarded(ctx, [&] {
    if (!o) throw Error(ErrorCode::kInvalidArgument, "options are required");
    ReplayArgs a;
    a.config = required(o->config_path, "config path");
    a.domain_dataset = optional_path(o->domain_dataset_dir);
    a.general_manifest = optional_path(o->general_manifest);
    a.general_image_root = optional_path(o->general_image_root);
    if (o->has_weights) a.weights = std::pair{o->domain_weight, o->general_weight};
    if (o->has_seed) a.seed = o->seed;
    a.output = required(o->output_path, "output path");
    return run_command(ctx, out, CYT_FORMAT_TABLE, &cmd_replay, a);
  });
}

cyt_status cyt_eval(cyt_context* ctx, const cyt_eval_options* o, cyt_result** out) {
  return guarded(ctx, [&] {
    if (!o) throw Error(ErrorCode::kInvalidArgument, "options are required");
    EvalArgs a;
    a.config = required(o->config_path, "config path");
    a.bench = o->bench ? o->bench : "";
    a.manifest = required(o->manifest_path, "manifest path");
    if (o->model_id && *o->model_id) a.model_id = o->model_id;
    a.image_root = optional_path(o->image_root);
    return run_command(ctx, out, o->format, &cmd_eval, a);
  });
}

cyt_status cyt_agreement(cyt_context* ctx, const cyt_agreement_options* o, cyt_result** out) {
  return guarded(ctx, [&] {
    if (!o) throw Error(ErrorCode::kInvalidArgument, "options are required");
    AgreementArgs a;
    for (std::size_t i = 0; i < o->rater_count; ++i) a.rater_files.emplace_back(required(o->rater_files[i], "rater file"));
    a.manifest = required(o->manifest_path, "manifest path");
    return run_command(ctx, out, o->format, &cmd_agreement, a);
  });
}

cyt_status cyt_simulate(cyt_context* ctx, const cyt_simulate_options* o, cyt_result** out) {
  return guarded(ctx, [&] {
    if (!o) throw Error(ErrorCode::kInvalidArgument, "options are required");
    SimulateArgs a{required(o->trial_config_path, "trial config path")};
    return run_command(ctx, out, o->format, &cmd_simulate, a);
  });
}

cyt_status cyt_parse_caption(cyt_context* ctx, const char* text, const char* lexicon_path, char** out_json) {
  return guarded(ctx, [&] {
    if (!text || !out_json) throw Error(ErrorCode::kInvalidArgument, "text and out_json are required");
    std::optional<Lexicon> custom;
    if (lexicon_path && *lexicon_path) custom = Lexicon::load(lexicon_path);
    auto caption = parse_structured_caption(text, custom ? *custom : Lexicon::builtin());
    *out_json = dup_string(to_json(caption).dump());
    return CYT_OK;
  });
}

cyt_status cyt_fuse_captions_json(cyt_context* ctx, const char* captions_json, const char* policy_json,
                                  char** out_json) {
  return guarded(ctx, [&] {
    if (!captions_json || !out_json) throw Error(ErrorCode::kInvalidArgument, "captions_json and out_json are required");
    FusionPolicy policy;
    try {
      if (policy_json && *policy_json) policy = policy_from_json(nlohmann::json::parse(policy_json));
      std::vector<AnnotatorCaption> captions;
      for (const auto& c : nlohmann::json::parse(captions_json)) {
        captions.push_back({c.at("endpoint_id").get<std::string>(), caption_from_json(c.at("caption"))});
      }
      *out_json = dup_string(to_json(fuse_consensus(captions, policy)).dump());
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kInvalidArgument, std::string("malformed JSON: ") + ex.what());
    }
    return CYT_OK;
  });
}

void cyt_string_free(char* s) { std::free(s); }

}  // extern "C"
