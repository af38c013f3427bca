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


#include <random>

#include "cytotext/refine.hpp"
#include "cytotext/simulate.hpp"
#include "doctest.h"
#include "mock_server.hpp"
#include "test_support.hpp"

using namespace cytotext;
using cytotext::testing::MockModel;
using cytotext::testing::MockServer;

namespace {

constexpr auto NE = MorphDimension::kNuclearEnlargement;
constexpr auto CT = MorphDimension::kChromatinTexture;
constexpr auto NM = MorphDimension::kNuclearMembrane;

FusedDescription fused_with(std::map<MorphDimension, Verdict> consensus) {
  FusedDescription f;
  for (auto d : all_dimensions()) {
    if (auto it = consensus.find(d); it != consensus.end()) {
      f.consensus[d] = {d, it->second, 1.0, "agreed"};
    } else {
      f.missing_dimensions.insert(d);
    }
  }
  f.narrative = "Fused narrative.";
  return f;
}

FusedDescription fused_missing_only(std::set<MorphDimension> missing) {
  std::map<MorphDimension, Verdict> consensus;
  for (auto d : all_dimensions()) {
    if (!missing.count(d)) consensus[d] = Verdict::kPositive;
  }
  return fused_with(consensus);
}

struct ExpertFixture {
  MockServer server;
  std::unique_ptr<ChatClient> client = cyt_test::fast_client();
  EndpointConfig expert;

  explicit ExpertFixture(std::string reply) {
    MockModel m;
    m.default_reply = std::move(reply);
    server.set_model("expert", m);
    expert = cyt_test::endpoint("expert", server.base_url(), "expert");
  }

  FinalDescription run(const FusedDescription& fused) {
    return refine_expert("img", "image/png", fused, expert, Lexicon::builtin(), *client, "sys",
                         "Missing: {missing_dimensions}\n{fused_narrative}");
  }
};

std::string phrase_for(MorphDimension d, Verdict v) { return PhraseBook::builtin().phrases(d, v).front(); }

}  // namespace

TEST_CASE("expert fills a missing dimension and cannot overwrite consensus") {
  ExpertFixture fx("The cell has a " + phrase_for(NM, Verdict::kNegative) + " and a " +
                   phrase_for(NE, Verdict::kPositive) + ".");
  auto fused = fused_missing_only({NM});
  fused.consensus[NE].verdict = Verdict::kNegative;
  auto f = fx.run(fused);
  REQUIRE(f.assertions.count(NM) == 1);
  CHECK(f.assertions.at(NM).verdict == Verdict::kNegative);
  CHECK(f.provenance.at(NM) == Provenance::kExpert);
  CHECK(f.assertions.at(NE) == fused.consensus.at(NE));
  CHECK(f.provenance.at(NE) == Provenance::kConsensus);
  CHECK(f.expert_endpoint_id == "expert");
  CHECK(f.narrative.rfind("Fused narrative.", 0) == 0);
  CHECK(f.narrative.size() > fused.narrative.size());
  CHECK(fx.server.calls("expert") == 1);
}

TEST_CASE("nothing missing skips the expert call") {
  ExpertFixture fx("irrelevant");
  auto fused = fused_missing_only({});
  auto f = fx.run(fused);
  CHECK(f == final_from_fused(fused));
  CHECK(f.narrative == fused.narrative);
  CHECK(fx.server.calls("expert") == 0);
}

TEST_CASE("partial fill records a warning") {
  ExpertFixture fx("There is " + phrase_for(CT, Verdict::kPositive) + ".");
  auto f = fx.run(fused_missing_only({CT, NM}));
  CHECK(f.provenance.at(CT) == Provenance::kExpert);
  CHECK(f.assertions.count(NM) == 0);
  REQUIRE_FALSE(f.warnings.empty());
  bool names_nm = false;
  for (const auto& w : f.warnings) names_nm = names_nm || w.find("NM") != std::string::npos;
  CHECK(names_nm);
}

TEST_CASE("a reply with no usable assertion keeps consensus content and warns") {
  ExpertFixture fx("I cannot tell from this image.");
  auto fused = fused_missing_only({CT});
  auto f = fx.run(fused);
  CHECK(f.assertions == fused.consensus);
  CHECK(f.narrative == fused.narrative);
  CHECK(f.warnings.size() == 1);
}

TEST_CASE("expert prompt names the missing dimensions and carries the image") {
  ExpertFixture fx("x");
  fx.run(fused_missing_only({NM, CT}));
  auto reqs = fx.server.requests("expert");
  REQUIRE(reqs.size() == 1);
  auto text = cytotext::testing::request_text(reqs[0]);
  CHECK(text.find("Chromatin Texture") != std::string::npos);
  CHECK(text.find("Nuclear Membrane") != std::string::npos);
  CHECK(text.find("Nuclear Enlargement") == std::string::npos);
  CHECK(text.find("Fused narrative.") != std::string::npos);
  CHECK(cytotext::testing::request_image(reqs[0]) == "img");
}

TEST_CASE("property: consensus immutability and monotonicity over randomized pairs") {
  MockServer server;
  MockModel m;
  std::mutex mu;
  std::string next_reply;
  m.handler = [&](const nlohmann::json&, const std::string&) {
    std::lock_guard lock(mu);
    return next_reply;
  };
  server.set_model("expert", m);
  auto client = cyt_test::fast_client();
  auto expert = cyt_test::endpoint("expert", server.base_url(), "expert");
  std::mt19937_64 rng(2024);

  std::size_t expected_calls = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::map<MorphDimension, Verdict> consensus;
    for (auto d : all_dimensions()) {
      auto r = rng() % 3;
      if (r == 1) consensus[d] = Verdict::kPositive;
      if (r == 2) consensus[d] = Verdict::kNegative;
    }
    auto fused = fused_with(consensus);
    std::string reply = "Expert view.";
    for (auto d : all_dimensions()) {
      auto r = rng() % 3;
      if (r == 0) continue;
      auto v = r == 1 ? Verdict::kPositive : Verdict::kNegative;
      const auto& options = PhraseBook::builtin().phrases(d, v);
      reply += " There is " + options[rng() % options.size()] + ".";
    }
    {
      std::lock_guard lock(mu);
      next_reply = reply;
    }
    if (!fused.missing_dimensions.empty()) ++expected_calls;
    auto f = refine_expert("img", "image/png", fused, expert, Lexicon::builtin(), *client, "", "{missing_dimensions}");

    CHECK(f.assertions.size() >= fused.consensus.size());
    for (const auto& [d, a] : fused.consensus) {
      REQUIRE(f.assertions.count(d) == 1);
      CHECK(f.assertions.at(d) == a);
      CHECK(f.provenance.at(d) == Provenance::kConsensus);
    }
    CHECK(f.provenance.size() == f.assertions.size());
    for (const auto& [d, p] : f.provenance) {
      if (p == Provenance::kExpert) CHECK(fused.missing_dimensions.count(d) == 1);
    }
  }
  CHECK(server.calls("expert") == expected_calls);
}

TEST_CASE("final description JSON round trip") {
  StructuredCaption reply;
  reply.assertions[CT] = {CT, Verdict::kPositive, 0.8, "coarse chromatin"};
  reply.narrative = "Coarse.";
  auto f = merge_expert(fused_missing_only({CT, NM}), reply, "exp");
  CHECK(final_from_json(nlohmann::json::parse(to_json(f).dump())) == f);
}
