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


#include <chrono>
#include <random>

#include "bench_fixture.hpp"
#include "cytotext/bench.hpp"
#include "cytotext/error.hpp"
#include "doctest.h"
#include "mock_server.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace cytotext;
using cytotext::testing::MockServer;
namespace fs = std::filesystem;

namespace {

constexpr auto P = Verdict::kPositive;
constexpr auto N = Verdict::kNegative;

const Lexicon& lex() { return Lexicon::builtin(); }

void install(MockServer& server, const nlohmann::json& script, const fs::path& dir) {
  for (auto& [name, model] : cytotext::testing::models_from_script(script, dir.string())) server.set_model(name, model);
}

RaterAnnotations rater(std::string id, std::map<std::string, Verdict> v) { return {std::move(id), std::move(v)}; }

MorphoBenchItem morpho_item(std::string id, MorphDimension d, Verdict truth) {
  return {id, {id, id + ".png", "", std::nullopt, "image/png"}, d, truth};
}

}  // namespace

TEST_CASE("binary answer extraction") {
  const auto NE = MorphDimension::kNuclearEnlargement;
  CHECK(extract_binary_answer("Yes, the nucleus is enlarged.", NE, lex()) == P);
  CHECK_FALSE(extract_binary_answer("", NE, lex()).has_value());
  CHECK_FALSE(extract_binary_answer("The chromatin appears coarse.", NE, lex()).has_value());
  CHECK(extract_binary_answer("No.", NE, lex()) == N);
  CHECK(extract_binary_answer("no", NE, lex()) == N);
  CHECK(extract_binary_answer("A", NE, lex()) == P);
  CHECK(extract_binary_answer("B) not enlarged", NE, lex()) == N);
  CHECK(extract_binary_answer("The nucleus appears enlarged.", NE, lex()) == P);
  CHECK(extract_binary_answer("It is not enlarged.", NE, lex()) == N);
  CHECK(extract_binary_answer("I see an enlarged nucleus in this cell.", NE, lex()) == P);
  CHECK_FALSE(extract_binary_answer("Nothing to say.", NE, lex()).has_value());
  CHECK(extract_binary_answer("The membrane is smooth.", MorphDimension::kNuclearMembrane, lex()) == N);
}

TEST_CASE("TBS answer extraction") {
  CHECK(extract_tbs_answer("Diagnosis: LSIL.") == TbsCategory::kLsil);
  CHECK_FALSE(extract_tbs_answer("This could be LSIL or HSIL.").has_value());
  CHECK(extract_tbs_answer("negative for intraepithelial lesion or malignancy") == TbsCategory::kNilm);
  CHECK(extract_tbs_answer("asc-us") == TbsCategory::kAscUs);
  CHECK(extract_tbs_answer("Category ASC-H.") == TbsCategory::kAscH);
  CHECK(extract_tbs_answer("Atypical glandular cells") == TbsCategory::kAgc);
  CHECK(extract_tbs_answer("High-grade squamous intraepithelial lesion (HSIL)") == TbsCategory::kHsil);
  CHECK_FALSE(extract_tbs_answer("").has_value());
  CHECK_FALSE(extract_tbs_answer("no idea").has_value());
}

TEST_CASE("manifest parsing") {
  auto items = parse_morpho_manifest(
      R"({"item_id":"i1","tile":{"uri":"a.png"},"dimension":"CT","ground_truth":"negative"})"
      "\n");
  REQUIRE(items.size() == 1);
  CHECK(items[0].tile.tile_id == "i1");
  CHECK(items[0].dimension == MorphDimension::kChromatinTexture);
  CHECK(items[0].ground_truth == N);
  auto cells = parse_cyto_manifest(R"({"item_id":"c1","tile":{"tile_id":"t","uri":"a.png"},"ground_truth":"ASC-US"})");
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].ground_truth == TbsCategory::kAscUs);
  CHECK_THROWS_AS(parse_cyto_manifest(R"({"item_id":"c1","tile":{"uri":"a"},"ground_truth":"XYZ"})"), Error);
  CHECK_THROWS_AS(parse_morpho_manifest(R"({"item_id":"i1","tile":{"uri":"a"},"dimension":"ZZ","ground_truth":"positive"})"),
                  Error);
  CHECK_THROWS_AS(parse_morpho_manifest("nope\n"), Error);
}

TEST_CASE("scoring matches an independent recount") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MorphoOutcome> outcomes;
    std::vector<oracle::Scored> scored;
    const int n = 1 + static_cast<int>(rng() % 300);
    for (int i = 0; i < n; ++i) {
      MorphoOutcome o{all_dimensions()[rng() % 9], rng() % 2 ? P : N, std::nullopt};
      auto r = rng() % 5;
      if (r == 1) o.predicted = P;
      if (r >= 2) o.predicted = o.truth;
      if (r == 4) o.predicted = flip(o.truth);
      outcomes.push_back(o);
      scored.push_back({std::string(info(o.dimension).code), std::string(verdict_name(o.truth)),
                        o.predicted ? std::optional<std::string>(verdict_name(*o.predicted)) : std::nullopt});
    }
    auto report = score_morpho(outcomes);
    auto expected = oracle::recount_accuracy(scored);
    for (std::size_t g = 0; g < report.groups.size(); ++g) {
      if (!expected.count(report.groups[g])) {
        CHECK_FALSE(report.accuracy[g].has_value());
        continue;
      }
      REQUIRE(report.accuracy[g].has_value());
      CHECK(*report.accuracy[g] == doctest::Approx(expected[report.groups[g]]).epsilon(1e-12));
    }
    REQUIRE(report.macro_average.has_value());
    CHECK(*report.macro_average == doctest::Approx(oracle::mean_of(expected)).epsilon(1e-12));

    // Confusion conservation.
    std::size_t total = 0, unparseable = 0;
    for (const auto& row : report.confusion.counts) {
      for (auto c : row) total += c;
      unparseable += row.back();
    }
    CHECK(total == report.n_items);
    CHECK(report.n_items == outcomes.size());
    CHECK(unparseable == report.n_unparseable);

    // Order independence.
    std::shuffle(outcomes.begin(), outcomes.end(), rng);
    auto again = score_morpho(outcomes);
    CHECK(again.accuracy == report.accuracy);
    CHECK(again.confusion.counts == report.confusion.counts);
  }
}

TEST_CASE("TBS scoring: recall per true class and a 6x7 confusion matrix") {
  std::vector<TbsOutcome> outcomes{{TbsCategory::kNilm, TbsCategory::kNilm},
                                   {TbsCategory::kNilm, TbsCategory::kAscH},
                                   {TbsCategory::kAscUs, std::nullopt},
                                   {TbsCategory::kAgc, TbsCategory::kAgc}};
  auto r = score_tbs(outcomes);
  REQUIRE(r.groups.size() == 6);
  CHECK(r.confusion.rows.size() == 6);
  CHECK(r.confusion.columns.size() == 7);
  CHECK(r.confusion.columns.back() == "unparseable");
  CHECK(*r.accuracy[0] == 50.0);
  CHECK(*r.accuracy[1] == 0.0);
  CHECK_FALSE(r.accuracy[2].has_value());
  CHECK(*r.accuracy[5] == 100.0);
  CHECK(*r.macro_average == doctest::Approx(50.0));
  CHECK(r.n_unparseable == 1);
  CHECK(r.confusion.counts[0][3] == 1);
}

TEST_CASE("morpho table: scripted rows reproduce the reference averages") {
  MockServer server;
  auto client = cyt_test::fast_client();
  for (const auto& [row, expected] : {std::pair{cyt_test::kTargetMorpho, 89.0}, std::pair{cyt_test::kBaselineMorpho, 53.1}}) {
    cyt_test::TempDir dir;
    auto script = cyt_test::write_morpho_bench(dir.path(), row, 1000, "vlm");
    install(server, script, dir.path());
    auto items = parse_morpho_manifest(cyt_test::read_file(dir / "morpho.jsonl"));
    auto model = cyt_test::endpoint("target", server.base_url(), "vlm");
    model.max_in_flight = 16;
    auto report = evaluate_morpho(items, model, PromptSet::defaults(), lex(), *client, {dir.path()});
    CHECK(report.n_items == 9000);
    CHECK(report.n_unparseable == 0);
    for (std::size_t d = 0; d < 9; ++d) CHECK(*report.accuracy[d] == doctest::Approx(row[d]).epsilon(1e-9));
    REQUIRE(report.macro_average.has_value());
    CHECK(std::abs(*report.macro_average - expected) <= 0.05);
    CHECK(report.model_name == "vlm");
  }
}

TEST_CASE("TBS table: scripted row and the always-one-class baseline") {
  MockServer server;
  auto client = cyt_test::fast_client();
  {
    cyt_test::TempDir dir;
    std::array<std::size_t, 6> counts;
    counts.fill(1000);
    install(server, cyt_test::write_tbs_bench(dir.path(), cyt_test::kTargetTbs, counts, "vlm"), dir.path());
    auto items = parse_cyto_manifest(cyt_test::read_file(dir / "tbs.jsonl"));
    auto model = cyt_test::endpoint("target", server.base_url(), "vlm");
    model.max_in_flight = 16;
    auto report = evaluate_tbs(items, model, PromptSet::defaults(), *client, {dir.path()});
    for (std::size_t c = 0; c < 6; ++c) CHECK(*report.accuracy[c] == doctest::Approx(cyt_test::kTargetTbs[c]));
    CHECK(std::abs(*report.macro_average - 80.2) <= 0.05);
  }
  {
    cyt_test::TempDir dir;
    std::array<double, 6> all_right;
    all_right.fill(100.0);
    auto script = cyt_test::write_tbs_bench(dir.path(), all_right, cyt_test::kTbsScaledCounts, "biased");
    script["models"]["biased"] = {{"default_reply", "The answer is ASC-H."}};
    install(server, script, dir.path());
    auto items = parse_cyto_manifest(cyt_test::read_file(dir / "tbs.jsonl"));
    auto model = cyt_test::endpoint("target", server.base_url(), "biased");
    model.max_in_flight = 16;
    auto report = evaluate_tbs(items, model, PromptSet::defaults(), *client, {dir.path()});
    const std::array<double, 6> expected{0, 0, 0, 100, 0, 0};
    for (std::size_t c = 0; c < 6; ++c) CHECK(*report.accuracy[c] == expected[c]);
    CHECK(std::abs(*report.macro_average - 16.7) <= 0.05);
    CHECK(report.n_items == 2911);
  }
}

TEST_CASE("evaluation: endpoint failure scores as unparseable and the prompt names the dimension") {
  MockServer server;
  cytotext::testing::MockModel broken;
  broken.always_status = 500;
  server.set_model("down", broken);
  cytotext::testing::MockModel echo;
  echo.default_reply = "Maybe.";
  server.set_model("echo", echo);
  cyt_test::TempDir dir;
  cyt_test::write_file(dir / "a.png", "PNG");
  std::vector<MorphoBenchItem> items{morpho_item("a", MorphDimension::kChromatinTexture, P)};
  auto client = cyt_test::fast_client();
  auto model = cyt_test::endpoint("m", server.base_url(), "down");
  model.max_retries = 0;
  auto report = evaluate_morpho(items, model, PromptSet::defaults(), lex(), *client, {dir.path()});
  CHECK(report.n_unparseable == 1);
  CHECK(*report.accuracy[index_of(MorphDimension::kChromatinTexture)] == 0.0);

  model.model_name = "echo";
  report = evaluate_morpho(items, model, PromptSet::defaults(), lex(), *client, {dir.path()});
  CHECK(report.n_unparseable == 1);
  auto reqs = server.requests("echo");
  REQUIRE(reqs.size() == 1);
  auto text = cytotext::testing::request_text(reqs[0]);
  CHECK(text.find("Chromatin Texture") != std::string::npos);
  CHECK(text.find("coarse") != std::string::npos);
  CHECK(cytotext::testing::request_image(reqs[0]) == "PNG");

  std::vector<MorphoBenchItem> none;
  CHECK_THROWS_AS(evaluate_morpho(none, model, PromptSet::defaults(), lex(), *client), Error);
}

TEST_CASE("report rendering is deterministic and matches the golden table") {
  std::vector<MorphoOutcome> outcomes{{MorphDimension::kNuclearEnlargement, P, P},
                                      {MorphDimension::kNuclearEnlargement, N, P},
                                      {MorphDimension::kChromatinTexture, N, N},
                                      {MorphDimension::kNuclearMembrane, P, std::nullopt}};
  auto r = score_morpho(outcomes);
  r.model_name = "demo";
  auto table = render_report(r, ReportFormat::kTable);
  CHECK(table == render_report(r, ReportFormat::kTable));
  CHECK(table == cyt_test::golden("morpho_report_table.txt", table));
  auto json = render_report(r, ReportFormat::kJson);
  CHECK(json == render_report(r, ReportFormat::kJson));
  auto parsed = nlohmann::json::parse(json);
  CHECK(parsed.at("n_items") == 4);
  CHECK(parsed.at("macro_average").get<double>() == doctest::Approx(50.0));
  CHECK(parsed.at("groups")[1].at("accuracy").is_null());
}

TEST_CASE("empty groups render as dash placeholders") {
  auto r = score_tbs(std::vector<TbsOutcome>{});
  auto table = render_report(r, ReportFormat::kTable);
  for (const auto& c : kTbsCategories) CHECK(table.find(std::string(c.code)) != std::string::npos);
  CHECK(table.find("Avg") != std::string::npos);
  std::size_t dashes = 0;
  for (auto pos = table.find("\xE2\x80\x93"); pos != std::string::npos; pos = table.find("\xE2\x80\x93", pos + 1)) ++dashes;
  CHECK(dashes == 7);
}

TEST_CASE("agreement: identical raters give exactly 100") {
  std::vector<MorphoBenchItem> items;
  std::map<std::string, Verdict> v;
  for (std::size_t d = 0; d < 9; ++d) {
    for (int i = 0; i < 4; ++i) {
      auto id = std::string(kDimensions[d].code) + std::to_string(i);
      items.push_back(morpho_item(id, kDimensions[d].dimension, i % 2 ? P : N));
      v[id] = i % 3 ? P : N;
    }
  }
  std::vector<RaterAnnotations> raters{rater("a", v), rater("b", v), rater("c", v)};
  auto r = inter_rater_agreement(raters, items);
  for (std::size_t d = 0; d < 9; ++d) CHECK(*r.percent[d] == 100.0);
  CHECK(*r.average == 100.0);
  CHECK(render_agreement(r, ReportFormat::kTable).find("100.0") != std::string::npos);
}

TEST_CASE("agreement: 3 disagreements in 10 items give 70") {
  std::vector<MorphoBenchItem> items;
  std::map<std::string, Verdict> a, b;
  for (int i = 0; i < 10; ++i) {
    auto id = "ne" + std::to_string(i);
    items.push_back(morpho_item(id, MorphDimension::kNuclearEnlargement, P));
    a[id] = P;
    b[id] = i < 3 ? N : P;
  }
  std::vector<RaterAnnotations> raters{rater("a", a), rater("b", b)};
  auto r = inter_rater_agreement(raters, items);
  CHECK(*r.percent[0] == 70.0);
  CHECK_FALSE(r.percent[1].has_value());
  CHECK(*r.average == 70.0);
}

TEST_CASE("agreement: three raters with P, P, N on one item agree on one pair of three") {
  const std::array<Verdict, 3> verdicts{P, P, N};
  auto pc = item_pair_agreement(verdicts);
  CHECK(pc.agreeing == 1);
  CHECK(pc.total == 3);
  std::vector<MorphoBenchItem> items{morpho_item("x", MorphDimension::kNucleolus, P)};
  std::vector<RaterAnnotations> raters{rater("a", {{"x", P}}), rater("b", {{"x", P}}), rater("c", {{"x", N}})};
  auto r = inter_rater_agreement(raters, items);
  CHECK(*r.percent[index_of(MorphDimension::kNucleolus)] == 100.0 / 3.0);
}

TEST_CASE("agreement errors") {
  std::vector<MorphoBenchItem> items{morpho_item("x", MorphDimension::kNucleolus, P)};
  std::vector<RaterAnnotations> one{rater("a", {{"x", P}})};
  try {
    inter_rater_agreement(one, items);
    FAIL("expected InsufficientRaters");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInsufficientRaters);
  }
  std::vector<RaterAnnotations> unknown{rater("a", {{"x", P}}), rater("b", {{"y", P}})};
  CHECK_THROWS_AS(inter_rater_agreement(unknown, items), Error);
}

TEST_CASE("property: pooled pair agreement matches a naive pair count") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n_raters = 2 + rng() % 5;
    const std::size_t n_items = 1 + rng() % 30;
    std::vector<MorphoBenchItem> items;
    std::vector<RaterAnnotations> raters(n_raters);
    std::vector<std::vector<bool>> per_item;
    for (std::size_t r = 0; r < n_raters; ++r) raters[r].rater_id = "r" + std::to_string(r);
    for (std::size_t i = 0; i < n_items; ++i) {
      auto id = "i" + std::to_string(i);
      items.push_back(morpho_item(id, MorphDimension::kNuclearAtypia, P));
      std::vector<bool> vs;
      for (auto& r : raters) {
        if (rng() % 4 == 0) continue;
        bool pos = rng() % 2;
        r.verdicts[id] = pos ? P : N;
        vs.push_back(pos);
      }
      per_item.push_back(vs);
    }
    auto [agree, total] = oracle::pair_agreement(per_item);
    auto r = inter_rater_agreement(raters, items);
    const auto& pc = r.pairs[index_of(MorphDimension::kNuclearAtypia)];
    CHECK(pc.agreeing == static_cast<std::size_t>(agree));
    CHECK(pc.total == static_cast<std::size_t>(total));
    if (total == 0) CHECK_FALSE(r.average.has_value());
  }
}

TEST_CASE("rater file parsing") {
  auto r = parse_rater_file("{\"item_id\":\"a\",\"verdict\":\"positive\"}\n\n{\"item_id\":\"b\",\"verdict\":false}\n", "r1");
  CHECK(r.rater_id == "r1");
  CHECK(r.verdicts.at("a") == P);
  CHECK(r.verdicts.at("b") == N);
  CHECK_THROWS_AS(parse_rater_file("{\"item_id\":\"a\",\"verdict\":\"maybe\"}", "r"), Error);
  CHECK_THROWS_AS(parse_rater_file("{\"item_id\":\"a\",\"verdict\":true}\n{\"item_id\":\"a\",\"verdict\":true}", "r"),
                  Error);
}
