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

// cytotext command-line entry point. Talks to the library only through the C API.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cytotext/cytotext.h"
#include "json.hpp"

namespace {

cyt_context* g_ctx = nullptr;

extern "C" void on_sigint(int) {
  if (g_ctx) cyt_context_cancel(g_ctx);
}

void install_sigint_handler() {
  struct sigaction sa {};
  sa.sa_handler = on_sigint;
  sa.sa_flags = SA_RESETHAND;  // a second Ctrl-C terminates immediately
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
}

extern "C" void log_to_stderr(cyt_log_level level, const char* message, void*) {
  static const char* kNames[] = {"debug", "info", "warn", "error"};
  std::fprintf(stderr, "[%s] %s\n", kNames[level], message);
}

struct Globals {
  std::string config;
  std::string log_level = "info";
  std::string format = "table";
};

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

cyt_format format_of(const Globals& g) { return g.format == "json" ? CYT_FORMAT_JSON : CYT_FORMAT_TABLE; }

void print_scalar_lines(const nlohmann::json& j, const std::string& indent) {
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      std::cout << indent << k << ":\n";
      print_scalar_lines(v, indent + "  ");
    } else if (v.is_array()) {
      if (v.empty()) continue;
      std::cout << indent << k << ":\n";
      for (const auto& e : v) std::cout << indent << "  - " << (e.is_string() ? e.get<std::string>() : e.dump()) << "\n";
    } else if (!v.is_null()) {
      std::cout << indent << k << ": " << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
    }
  }
}

void print_summary(const nlohmann::json& summary, const Globals& g) {
  if (g.format == "json") {
    std::cout << summary.dump(2) << "\n";
    return;
  }
  std::cout << "== run summary ==\n";
  print_scalar_lines(summary, "");
}

// Prints report and summary; returns the process exit code.
int finish(const char* command, cyt_status st, cyt_result* result, const Globals& g) {
  const int code = cyt_status_exit_code(st);
  if (st != CYT_OK) {
    std::fprintf(stderr, "cytotext %s: %s: %s\n", command, cyt_status_name(st), cyt_context_last_error(g_ctx));
  }
  if (result) {
    std::string report = cyt_result_report(result);
    if (!report.empty()) std::cout << report << (report.back() == '\n' ? "" : "\n");
    auto summary = nlohmann::json::parse(cyt_result_summary_json(result));
    summary["exit_code"] = code;
    if (st != CYT_OK) summary["status"] = cyt_status_name(st);
    print_summary(summary, g);
    cyt_result_destroy(result);
  } else {
    nlohmann::json summary{{"command", command},
                           {"status", cyt_status_name(st)},
                           {"error", cyt_context_last_error(g_ctx)},
                           {"exit_code", code}};
    print_summary(summary, g);
  }
  std::cout.flush();
  return code;
}

int usage_error(const std::string& message) {
  std::fprintf(stderr, "cytotext: %s\n", message.c_str());
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cytotext: weak-annotator fusion pipeline for cytology image captions, plus dataset and "
               "benchmark tooling"};
  app.set_version_flag("--version", cyt_version());
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "Pipeline config file (JSON)");
  app.add_option("--log-level", g.log_level, "debug, info, warn or error")
      ->check(CLI::IsMember({"debug", "info", "warn", "error"}));
  app.add_option("--format", g.format, "Output format for reports and the run summary: table or json")
      ->check(CLI::IsMember({"table", "json"}));

  // annotate
  std::string ann_manifest, ann_output, ann_image_root;
  bool ann_resume = false;
  auto* annotate = app.add_subcommand("annotate", "Caption a tile manifest with annotators, integrator and expert into shards");
  annotate->add_option("manifest", ann_manifest, "Tile manifest (JSON lines)")->required();
  annotate->add_option("-o,--output", ann_output, "Output dataset directory")->required();
  annotate->add_option("--image-root", ann_image_root, "Base for relative tile paths (default: manifest dir)");
  annotate->add_flag("--resume", ann_resume, "Continue from the checkpoint in the output directory");

  // fuse
  std::string fuse_dataset, fuse_output;
  auto* fuse = app.add_subcommand("fuse", "Re-run consensus fusion from the saved annotator replies of a dataset");
  fuse->add_option("dataset", fuse_dataset, "Input dataset directory")->required();
  fuse->add_option("-o,--output", fuse_output, "Output dataset directory")->required();

  // refine
  std::string ref_dataset, ref_output, ref_image_root = ".";
  auto* refine = app.add_subcommand("refine", "Run the expert stage over a dataset's missing dimensions");
  refine->add_option("dataset", ref_dataset, "Input dataset directory")->required();
  refine->add_option("-o,--output", ref_output, "Output dataset directory")->required();
  refine->add_option("--image-root", ref_image_root, "Base for relative image paths")->capture_default_str();

  // reformat
  std::string rf_dataset, rf_templates, rf_output;
  std::optional<std::uint64_t> rf_seed;
  auto* reformat = app.add_subcommand("reformat", "Turn dataset records into instruction dialogues (JSON lines)");
  reformat->add_option("dataset", rf_dataset, "Input dataset directory")->required();
  reformat->add_option("--templates", rf_templates, "Dialogue template file (default: built-in templates)");
  reformat->add_option("--seed", rf_seed, "Template draw seed (default: config reformat.seed, else 0)");
  reformat->add_option("-o,--output", rf_output, "Output JSON lines file")->required();

  // replay
  std::string rp_domain, rp_general, rp_general_root, rp_output;
  std::vector<double> rp_weights;
  std::optional<std::uint64_t> rp_seed;
  auto* replay = app.add_subcommand("replay", "Generate and mix domain and general knowledge-replay samples");
  replay->add_option("--domain", rp_domain, "Dataset directory whose narratives seed text-only QA");
  replay->add_option("--general", rp_general, "General-domain image manifest for visual QA");
  replay->add_option("--general-image-root", rp_general_root, "Base for relative general image paths");
  replay->add_option("--weights", rp_weights, "Mixing weights: DOMAIN GENERAL (default: config replay weights)")
      ->expected(2);
  replay->add_option("--seed", rp_seed, "Mixing seed (default: config replay.seed)");
  replay->add_option("-o,--output", rp_output, "Output JSON lines file")->required();

  // eval
  std::string ev_bench, ev_manifest, ev_model, ev_image_root;
  auto* eval = app.add_subcommand("eval", "Score a model on a morphology or TBS benchmark");
  eval->add_option("--bench", ev_bench, "Benchmark kind: morpho or tbs")->required();
  eval->add_option("manifest", ev_manifest, "Benchmark manifest (JSON lines)")->required();
  eval->add_option("--model", ev_model, "Endpoint id to evaluate (default: config \"model\")");
  eval->add_option("--image-root", ev_image_root, "Base for relative image paths (default: manifest dir)");

  // agreement
  std::vector<std::string> ag_raters;
  std::string ag_manifest;
  auto* agreement = app.add_subcommand("agreement", "Pairwise inter-rater agreement per morphology dimension");
  agreement->add_option("raters", ag_raters, "Rater files (JSON lines), one per rater")->required();
  agreement->add_option("--manifest", ag_manifest, "Morphology benchmark manifest")->required();

  // simulate
  std::string sim_config;
  auto* simulate = app.add_subcommand("simulate", "Run a synthetic weak-annotator fusion trial");
  simulate->add_option("trial_config", sim_config, "Trial config file (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  static const std::map<std::string, cyt_log_level> kLevels{
      {"debug", CYT_LOG_DEBUG}, {"info", CYT_LOG_INFO}, {"warn", CYT_LOG_WARN}, {"error", CYT_LOG_ERROR}};
  cyt_set_log_callback(log_to_stderr, nullptr, kLevels.at(g.log_level));

  if (cyt_context_create(&g_ctx) != CYT_OK) {
    std::fprintf(stderr, "cytotext: cannot create context\n");
    return 1;
  }
  install_sigint_handler();

  auto need_config = [&](const char* command) -> bool {
    if (!g.config.empty()) return true;
    usage_error(std::string(command) + " requires --config");
    return false;
  };

  int code = 0;
  cyt_result* result = nullptr;
  if (*annotate) {
    if (!need_config("annotate")) return 2;
    cyt_annotate_options o{g.config.c_str(), ann_manifest.c_str(), ann_output.c_str(), opt(ann_image_root),
                           ann_resume ? 1 : 0};
    cyt_status st = cyt_annotate(g_ctx, &o, &result);
    code = finish("annotate", st, result, g);
  } else if (*fuse) {
    if (!need_config("fuse")) return 2;
    cyt_fuse_options o{g.config.c_str(), fuse_dataset.c_str(), fuse_output.c_str()};
    cyt_status st = cyt_fuse(g_ctx, &o, &result);
    code = finish("fuse", st, result, g);
  } else if (*refine) {
    if (!need_config("refine")) return 2;
    cyt_refine_options o{g.config.c_str(), ref_dataset.c_str(), ref_output.c_str(), opt(ref_image_root)};
    cyt_status st = cyt_refine(g_ctx, &o, &result);
    code = finish("refine", st, result, g);
  } else if (*reformat) {
    cyt_reformat_options o{opt(g.config), rf_dataset.c_str(), opt(rf_templates), rf_seed ? 1 : 0,
                           rf_seed.value_or(0), rf_output.c_str()};
    cyt_status st = cyt_reformat(g_ctx, &o, &result);
    code = finish("reformat", st, result, g);
  } else if (*replay) {
    if (!need_config("replay")) return 2;
    cyt_replay_options o{g.config.c_str(), opt(rp_domain), opt(rp_general), opt(rp_general_root),
                         rp_weights.empty() ? 0 : 1, rp_weights.empty() ? 0.0 : rp_weights[0],
                         rp_weights.empty() ? 0.0 : rp_weights[1], rp_seed ? 1 : 0, rp_seed.value_or(0),
                         rp_output.c_str()};
    cyt_status st = cyt_replay(g_ctx, &o, &result);
    code = finish("replay", st, result, g);
  } else if (*eval) {
    if (!need_config("eval")) return 2;
    cyt_eval_options o{g.config.c_str(), ev_bench.c_str(), ev_manifest.c_str(), opt(ev_model), opt(ev_image_root),
                       format_of(g)};
    cyt_status st = cyt_eval(g_ctx, &o, &result);
    code = finish("eval", st, result, g);
  } else if (*agreement) {
    std::vector<const char*> files;
    for (const auto& f : ag_raters) files.push_back(f.c_str());
    cyt_agreement_options o{files.data(), files.size(), ag_manifest.c_str(), format_of(g)};
    cyt_status st = cyt_agreement(g_ctx, &o, &result);
    code = finish("agreement", st, result, g);
  } else if (*simulate) {
    cyt_simulate_options o{sim_config.c_str(), format_of(g)};
    cyt_status st = cyt_simulate(g_ctx, &o, &result);
    code = finish("simulate", st, result, g);
  }

  cyt_context* ctx = g_ctx;
  g_ctx = nullptr;
  cyt_context_destroy(ctx);
  return code;
}
