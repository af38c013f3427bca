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

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cytotext/config.hpp"
#include "cytotext/endpoints.hpp"
#include "cytotext/lexicon.hpp"
#include "cytotext/pipeline.hpp"
#include "cytotext/schema.hpp"

namespace cytotext {

// --- answer extraction --------------------------------------------------------

// Order of evidence: a leading "yes"/"no"; an option letter ("A" = positive
// label, "B" = negative label); polarity labels of the queried dimension or
// yes/no anywhere, when they all point the same way; finally the lexicon
// restricted to the queried dimension. nullopt means Unparseable.
std::optional<Verdict> extract_binary_answer(std::string_view raw, MorphDimension dimension, const Lexicon& lexicon);

// Codes, spelled-out names and common variants, case-insensitive, longest
// match wins. More than one distinct category, or none, is Unparseable.
std::optional<TbsCategory> extract_tbs_answer(std::string_view raw);

// --- benchmark items ----------------------------------------------------------

struct MorphoBenchItem {
  std::string item_id;
  ImageTile tile;
  MorphDimension dimension{};
  Verdict ground_truth{};
};

struct CytoBenchItem {
  std::string item_id;
  ImageTile tile;
  TbsCategory ground_truth{};
};

// Line-delimited JSON: {"item_id", "tile": {...}, "dimension", "ground_truth"}
// and {"item_id", "tile": {...}, "ground_truth": "<TBS code>"}. A tile without
// tile_id takes the item id. Throws Error(kManifestInvalid).
std::vector<MorphoBenchItem> parse_morpho_manifest(std::string_view text, std::string_view source = "<bench>");
std::vector<CytoBenchItem> parse_cyto_manifest(std::string_view text, std::string_view source = "<bench>");

// --- reports ------------------------------------------------------------------

enum class BenchKind { kMorpho, kTbs };

struct ConfusionMatrix {
  std::vector<std::string> rows;     // truth labels
  std::vector<std::string> columns;  // prediction labels, last one "unparseable"
  std::vector<std::vector<std::size_t>> counts;
};

struct EvalReport {
  BenchKind kind = BenchKind::kMorpho;
  std::vector<std::string> groups;  // dimension or category codes, canonical order
  std::vector<std::size_t> group_correct;
  std::vector<std::size_t> group_total;
  std::vector<std::optional<double>> accuracy;  // percent; nullopt for groups with no items
  std::optional<double> macro_average;          // over represented groups
  ConfusionMatrix confusion;
  std::size_t n_items = 0;
  std::size_t n_unparseable = 0;
  std::string model_name;
  std::string run_config_hash;
};

struct MorphoOutcome {
  MorphDimension dimension{};
  Verdict truth{};
  std::optional<Verdict> predicted;
};

struct TbsOutcome {
  TbsCategory truth{};
  std::optional<TbsCategory> predicted;
};

// Pure scoring folds; independent of outcome order. Morpho confusion rows are
// "<code>:positive" / "<code>:negative", TBS rows are category codes.
EvalReport score_morpho(std::span<const MorphoOutcome> outcomes);
EvalReport score_tbs(std::span<const TbsOutcome> outcomes);

struct EvalOptions {
  std::filesystem::path image_root = ".";
};

// Queries `model` once per item with up to max_in_flight requests in flight.
// An item whose request fails scores as Unparseable. Throws kInvalidArgument
// on an empty item list.
EvalReport evaluate_morpho(std::span<const MorphoBenchItem> items, const EndpointConfig& model,
                           const PromptSet& prompts, const Lexicon& lexicon, ChatClient& client,
                           const EvalOptions& options = {});
EvalReport evaluate_tbs(std::span<const CytoBenchItem> items, const EndpointConfig& model, const PromptSet& prompts,
                        ChatClient& client, const EvalOptions& options = {});

enum class ReportFormat { kTable, kJson };

std::string render_report(const EvalReport& report, ReportFormat format);
nlohmann::json to_json(const EvalReport& report);

// --- inter-rater agreement ----------------------------------------------------

struct RaterAnnotations {
  std::string rater_id;
  std::map<std::string, Verdict> verdicts;  // item id -> verdict
};

// Line-delimited {"item_id", "verdict"}; `rater_id` names the rater unless a
// line carries its own "rater_id".
RaterAnnotations parse_rater_file(std::string_view text, std::string rater_id, std::string_view source = "<rater>");

struct PairCount {
  std::size_t agreeing = 0;
  std::size_t total = 0;
};

// Pairs of raters that gave the same verdict, over all C(n,2) pairs.
PairCount item_pair_agreement(std::span<const Verdict> verdicts);

struct AgreementReport {
  std::array<PairCount, kDimensionCount> pairs{};
  std::array<std::optional<double>, kDimensionCount> percent{};  // nullopt without comparable pairs
  std::optional<double> average;
  std::size_t n_raters = 0;
};

// Pooled pairwise percent agreement per dimension. Throws
// kInsufficientRaters below two raters and kInvalidArgument when a rater
// names an item the benchmark does not contain.
AgreementReport inter_rater_agreement(std::span<const RaterAnnotations> raters,
                                      std::span<const MorphoBenchItem> items);

std::string render_agreement(const AgreementReport& report, ReportFormat format);
nlohmann::json to_json(const AgreementReport& report);

}  // namespace cytotext
