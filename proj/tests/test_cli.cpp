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


#include <csignal>
#include <thread>

#include "bench_fixture.hpp"
#include "cli_runner.hpp"
#include "doctest.h"
#include "mock_server.hpp"

using cyt_test::run_cli;
using cytotext::testing::MockModel;
using cytotext::testing::MockServer;
namespace fs = std::filesystem;

namespace {

nlohmann::json endpoint_json(const std::string& id, const std::string& url, const std::string& model) {
  return {{"id", id},
          {"base_url", url},
          {"model", model},
          {"max_retries", 1},
          {"retry_backoff_base_ms", 1},
          {"retry_backoff_cap_ms", 5},
          {"max_in_flight", 8}};
}

// A dataset-producing setup: three annotators, an expert and a QA generator.
struct CliFixture {
  MockServer server;
  cyt_test::TempDir dir;
  fs::path config;
  fs::path manifest;

  explicit CliFixture(std::size_t n_tiles = 3, std::size_t shard_size = 2, int latency_ms = 0) {
    MockModel ann;
    ann.default_reply = "The nucleus is enlarged and the chromatin is coarse.";
    ann.latency_ms = latency_ms;
    for (const char* m : {"ann-a", "ann-b", "ann-c"}) server.set_model(m, ann);
    MockModel expert;
    expert.default_reply = "There is an irregular nuclear membrane.";
    server.set_model("expert", expert);
    MockModel gen;
    gen.default_reply = "Q: What is seen?\nA: A squamous cell.";
    server.set_model("gen", gen);

    const auto url = server.base_url();
    nlohmann::json c{{"endpoints",
                      {endpoint_json("a", url, "ann-a"), endpoint_json("b", url, "ann-b"),
                       endpoint_json("c", url, "ann-c"), endpoint_json("expert", url, "expert"),
                       endpoint_json("gen", url, "gen")}},
                     {"annotators", {"a", "b", "c"}},
                     {"expert", "expert"},
                     {"generator", "gen"},
                     {"shard_size", shard_size},
                     {"concurrency", 4},
                     {"fixed_created_at", "2026-01-01T00:00:00Z"}};
    config = dir / "config.json";
    cyt_test::write_file(config, c.dump(2));
    std::string m;
    for (std::size_t i = 0; i < n_tiles; ++i) {
      const auto id = "tile-" + std::to_string(i);
      cyt_test::write_file(dir / ("images/" + id + ".png"), "\x89PNG " + id);
      m += cyt_test::tile_json(id, "images/" + id + ".png") + "\n";
    }
    manifest = dir / "manifest.jsonl";
    cyt_test::write_file(manifest, m);
  }

  std::string path(const std::string& name) const { return (dir / name).string(); }
};

bool summary_is_last(const std::string& out) {
  auto pos = out.rfind("== run summary ==");
  if (pos == std::string::npos) return false;
  // Only "key: value" lines, nested keys and list items follow the header.
  std::istringstream rest(out.substr(pos + 18));
  for (std::string line; std::getline(rest, line);) {
    if (line.empty()) return false;
    if (line.find(':') == std::string::npos && line.find("  - ") != 0 && line.find("    - ") != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("annotate: valid mock run, summary and exit 0") {
  CliFixture f;
  auto r = run_cli({"--config", f.config.string(), "annotate", f.manifest.string(), "-o", f.path("out")});
  INFO(r.err);
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("succeeded: 3") != std::string::npos);
  CHECK(summary_is_last(r.out));
  CHECK(fs::exists(f.dir / "out/shard-000000.jsonl"));
  CHECK(fs::exists(f.dir / "out/dataset_manifest.json"));
}

TEST_CASE("annotate: missing config is a usage error naming the path") {
  CliFixture f;
  auto missing = f.path("nope.json");
  auto r = run_cli({"--config", missing, "annotate", f.manifest.string(), "-o", f.path("out")});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find(missing) != std::string::npos);
  CHECK(summary_is_last(r.out));
}

TEST_CASE("annotate: resume without a checkpoint") {
  CliFixture f;
  auto r = run_cli({"--config", f.config.string(), "annotate", f.manifest.string(), "-o", f.path("out"), "--resume"});
  CHECK(r.exit_code == 2);
  CHECK(r.err.find("ManifestHashMismatch") != std::string::npos);
}

TEST_CASE("annotate: rerun into an existing output needs --resume") {
  CliFixture f;
  CHECK(run_cli({"--config", f.config.string(), "annotate", f.manifest.string(), "-o", f.path("out")}).exit_code == 0);
  auto again = run_cli({"--config", f.config.string(), "annotate", f.manifest.string(), "-o", f.path("out")});
  CHECK(again.exit_code == 2);
  CHECK(again.err.find("CheckpointExists") != std::string::npos);
  auto resumed =
      run_cli({"--config", f.config.string(), "annotate", f.manifest.string(), "-o", f.path("out"), "--resume"});
  CHECK(resumed.exit_code == 0);
}

TEST_CASE("annotate: interrupt flushes a checkpoint, exits 1, and resume completes") {
  CliFixture f(40, 4, 15);
  cyt_test::TempDir scratch;
  cyt_test::CliProcess p({"--config", f.config.string(), "annotate", f.manifest.string(), "-o", f.path("out")},
                         scratch.path());
  REQUIRE(p.pid() > 0);
  const auto checkpoint = f.dir / "out/checkpoint.json";
  for (int i = 0; i < 2000 && !fs::exists(checkpoint); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(2));
  REQUIRE(fs::exists(checkpoint));
  kill(p.pid(), SIGINT);
  auto r = p.wait();
  INFO(r.err);
  CHECK(r.exit_code == 1);
  CHECK(r.out.find("cancelled: true") != std::string::npos);
  auto resumed =
      run_cli({"--config", f.config.string(), "annotate", f.manifest.string(), "-o", f.path("out"), "--resume"});
  CHECK(resumed.exit_code == 0);
  auto manifest = nlohmann::json::parse(cyt_test::read_file(f.dir / "out/dataset_manifest.json"));
  CHECK(manifest.at("total_records") == 40);
}

TEST_CASE("fuse, refine, reformat and replay chain") {
  CliFixture f;
  const auto cfg = f.config.string();
  REQUIRE(run_cli({"--config", cfg, "annotate", f.manifest.string(), "-o", f.path("raw")}).exit_code == 0);

  auto fused = run_cli({"--config", cfg, "fuse", f.path("raw"), "-o", f.path("fused")});
  INFO(fused.err);
  CHECK(fused.exit_code == 0);
  CHECK(summary_is_last(fused.out));

  auto refined = run_cli({"--config", cfg, "refine", f.path("fused"), "-o", f.path("refined"), "--image-root",
                          f.dir.path().string()});
  INFO(refined.err);
  CHECK(refined.exit_code == 0);

  auto reformatted = run_cli({"reformat", f.path("refined"), "--seed", "5", "-o", f.path("sft.jsonl")});
  CHECK(reformatted.exit_code == 0);
  CHECK(reformatted.out.find("samples: 3") != std::string::npos);
  auto again = run_cli({"reformat", f.path("refined"), "--seed", "5", "-o", f.path("sft2.jsonl")});
  CHECK(cyt_test::read_file(f.dir / "sft.jsonl") == cyt_test::read_file(f.dir / "sft2.jsonl"));

  cyt_test::write_file(f.dir / "general.jsonl", cyt_test::tile_json("g0", "images/tile-0.png") + "\n");
  auto replay = run_cli({"--config", cfg, "replay", "--domain", f.path("refined"), "--general", f.path("general.jsonl"),
                         "--seed", "3", "-o", f.path("replay.jsonl")});
  INFO(replay.err);
  CHECK(replay.exit_code == 0);
  CHECK(replay.out.find("mixed_samples: 4") != std::string::npos);
}

TEST_CASE("reformat: bad template file and all-records-skipped") {
  CliFixture f;
  REQUIRE(run_cli({"--config", f.config.string(), "annotate", f.manifest.string(), "-o", f.path("raw")}).exit_code == 0);
  cyt_test::write_file(f.dir / "bad.jsonl", R"({"template_id":"x","turns":[{"role":"user","text":"{bogus}"}]})");
  auto bad = run_cli({"reformat", f.path("raw"), "--templates", f.path("bad.jsonl"), "-o", f.path("o.jsonl")});
  CHECK(bad.exit_code == 2);
  CHECK(bad.err.find("TemplateInvalid") != std::string::npos);

  cyt_test::write_file(
      f.dir / "nm.jsonl",
      R"({"template_id":"koil","turns":[{"role":"user","text":"Koilocytes?"},{"role":"assistant","text":"{assertion:Koilocyte}"}]})");
  auto skipped = run_cli({"reformat", f.path("raw"), "--templates", f.path("nm.jsonl"), "-o", f.path("o.jsonl")});
  CHECK(skipped.exit_code == 0);
  CHECK(skipped.out.find("skipped: 3") != std::string::npos);
  CHECK(skipped.out.find("warnings:") != std::string::npos);
}

TEST_CASE("replay: zero weights and a dead generator") {
  CliFixture f;
  const auto cfg = f.config.string();
  REQUIRE(run_cli({"--config", cfg, "annotate", f.manifest.string(), "-o", f.path("raw")}).exit_code == 0);
  auto zero = run_cli({"--config", cfg, "replay", "--domain", f.path("raw"), "--weights", "0", "0", "-o",
                       f.path("r.jsonl")});
  CHECK(zero.exit_code == 2);

  auto c = nlohmann::json::parse(cyt_test::read_file(f.config));
  c["endpoints"][4]["base_url"] = "http://127.0.0.1:1/v1";
  cyt_test::write_file(f.dir / "dead.json", c.dump());
  auto dead = run_cli({"--config", f.path("dead.json"), "replay", "--domain", f.path("raw"), "-o", f.path("r.jsonl")});
  CHECK(dead.exit_code == 0);
  CHECK(dead.out.find("endpoint_failures: 3") != std::string::npos);
  CHECK(dead.out.find("skipped: 3") != std::string::npos);
}

TEST_CASE("eval: full accuracy, unknown bench and the reference row") {
  MockServer server;
  cyt_test::TempDir dir;
  std::array<double, 9> perfect;
  perfect.fill(100.0);
  auto script = cyt_test::write_morpho_bench(dir.path(), perfect, 10, "perfect", "perfect.jsonl");
  auto row = cyt_test::write_morpho_bench(dir.path(), cyt_test::kTargetMorpho, 1000, "row", "row.jsonl");
  for (auto* s : {&script, &row}) {
    for (auto& [name, m] : cytotext::testing::models_from_script(*s, dir.path().string())) server.set_model(name, m);
  }
  auto cfg = cyt_test::eval_config(server.base_url(), "perfect");
  cfg["endpoints"].push_back(cyt_test::eval_config(server.base_url(), "row")["endpoints"][0]);
  cfg["endpoints"][1]["id"] = "row";
  cyt_test::write_file(dir / "config.json", cfg.dump());
  const auto c = (dir / "config.json").string();

  auto full = run_cli({"--config", c, "eval", "--bench", "morpho", (dir / "perfect.jsonl").string()});
  CHECK(full.exit_code == 0);
  CHECK(full.out.find("100.0") != std::string::npos);
  CHECK(summary_is_last(full.out));

  auto unknown = run_cli({"--config", c, "eval", "--bench", "cells", (dir / "perfect.jsonl").string()});
  CHECK(unknown.exit_code == 2);

  auto reference = run_cli({"--config", c, "--format", "json", "eval", "--bench", "morpho", "--model", "row",
                            (dir / "row.jsonl").string()});
  CHECK(reference.exit_code == 0);
  auto report_end = reference.out.find("\n}\n");
  REQUIRE(report_end != std::string::npos);
  auto report = nlohmann::json::parse(reference.out.substr(0, report_end + 2));
  CHECK(std::abs(report.at("macro_average").get<double>() - 89.0) <= 0.05);
  auto table = run_cli({"--config", c, "eval", "--bench", "morpho", "--model", "row", (dir / "row.jsonl").string()});
  CHECK(table.out.find("89.0") != std::string::npos);
}

TEST_CASE("agreement: identical raters, one rater, three raters") {
  cyt_test::TempDir dir;
  std::array<double, 9> any{};
  cyt_test::write_morpho_bench(dir.path(), any, 1, "m");
  std::string all;
  for (const auto& d : cytotext::kDimensions) all += R"({"item_id":")" + std::string(d.code) + R"(-0","verdict":"positive"})" "\n";
  cyt_test::write_file(dir / "r1.jsonl", all);
  cyt_test::write_file(dir / "r2.jsonl", all);
  const auto manifest = (dir / "morpho.jsonl").string();
  auto same = run_cli({"agreement", (dir / "r1.jsonl").string(), (dir / "r2.jsonl").string(), "--manifest", manifest});
  CHECK(same.exit_code == 0);
  CHECK(same.out.find("average_agreement: 100.0") != std::string::npos);

  auto one = run_cli({"agreement", (dir / "r1.jsonl").string(), "--manifest", manifest});
  CHECK(one.exit_code == 2);

  cyt_test::write_file(dir / "p1.jsonl", R"({"item_id":"NE-0","verdict":"positive"})");
  cyt_test::write_file(dir / "p2.jsonl", R"({"item_id":"NE-0","verdict":"positive"})");
  cyt_test::write_file(dir / "n3.jsonl", R"({"item_id":"NE-0","verdict":"negative"})");
  auto three = run_cli({"--format", "json", "agreement", (dir / "p1.jsonl").string(), (dir / "p2.jsonl").string(),
                        (dir / "n3.jsonl").string(), "--manifest", manifest});
  CHECK(three.exit_code == 0);
  auto report = nlohmann::json::parse(three.out.substr(0, three.out.find("\n}\n") + 2));
  CHECK(report.at("dimensions")[0].at("agreeing_pairs") == 1);
  CHECK(report.at("dimensions")[0].at("total_pairs") == 3);
}

TEST_CASE("simulate: trio at 0.7, perfect annotator, bad config") {
  auto trio = run_cli({"simulate", std::string(CYT_SOURCE_DIR) + "/configs/trial_p07.json"});
  CHECK(trio.exit_code == 0);
  CHECK(trio.out.find("oracle fused accuracy: 0.7840") != std::string::npos);
  auto pos = trio.out.find("fused mean accuracy: ");
  REQUIRE(pos != std::string::npos);
  CHECK(std::abs(std::stod(trio.out.substr(pos + 21)) - 0.784) <= 0.01);

  auto perfect = run_cli({"simulate", std::string(CYT_SOURCE_DIR) + "/configs/trial_p10.json"});
  CHECK(perfect.exit_code == 0);
  CHECK(perfect.out.find("fused mean accuracy: 1.0000") != std::string::npos);

  cyt_test::TempDir dir;
  cyt_test::write_file(dir / "bad.json", R"({"n_cases": -1})");
  CHECK(run_cli({"simulate", (dir / "bad.json").string()}).exit_code == 2);
}

TEST_CASE("usage errors and help") {
  CHECK(run_cli({}).exit_code == 2);
  CHECK(run_cli({"frobnicate"}).exit_code == 2);
  CHECK(run_cli({"eval", "x.jsonl"}).exit_code == 2);
  CHECK(run_cli({"--format", "xml", "simulate", "x"}).exit_code == 2);
  for (const char* sub : {"annotate", "fuse", "refine", "reformat", "replay", "eval", "agreement", "simulate"}) {
    auto r = run_cli({sub, "--help"});
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("--help") != std::string::npos);
  }
  auto annotate_help = run_cli({"annotate", "--help"});
  CHECK(annotate_help.out.find("--resume") != std::string::npos);
  CHECK(annotate_help.out.find("--output") != std::string::npos);
  auto top = run_cli({"--help"});
  CHECK(top.out.find("--config") != std::string::npos);
  CHECK(top.out.find("--log-level") != std::string::npos);
  CHECK(top.out.find("--format") != std::string::npos);
}

TEST_CASE("json format ends with a machine-readable summary") {
  cyt_test::TempDir dir;
  auto r = run_cli({"--format", "json", "simulate", std::string(CYT_SOURCE_DIR) + "/configs/trial_p10.json"});
  REQUIRE(r.exit_code == 0);
  // The report object comes first, the summary object last.
  auto split = r.out.find("\n}\n");
  REQUIRE(split != std::string::npos);
  auto summary = nlohmann::json::parse(r.out.substr(split + 3));
  CHECK(summary.at("command") == "simulate");
  CHECK(summary.at("exit_code") == 0);
  CHECK(summary.contains("started_at"));
  CHECK(summary.contains("finished_at"));
}
