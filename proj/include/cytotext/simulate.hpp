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
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cytotext/bench.hpp"
#include "cytotext/fusion.hpp"
#include "cytotext/lexicon.hpp"
#include "cytotext/schema.hpp"

namespace cytotext {

// A synthetic weak annotator. Errors are independent across dimensions,
// cases and annotators.
struct AnnotatorProfile {
  std::string profile_id;
  std::array<double, kDimensionCount> accuracy{};
  std::array<double, kDimensionCount> coverage{};
  // Sentence templates with one {phrase} slot each.
  std::vector<std::string> verbosity{"The cell shows {phrase}."};
  std::uint64_t seed = 0;
};

// Throws Error(kConfigInvalid) for probabilities outside [0,1], empty
// verbosity or a template without {phrase}.
void validate(const AnnotatorProfile& profile);
// "accuracy" and "coverage" are a number (all dimensions) or a map of codes.
AnnotatorProfile profile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AnnotatorProfile& profile);

struct SyntheticCase {
  std::string case_id;
  std::array<Verdict, kDimensionCount> truth{};
  TbsCategory tbs = TbsCategory::kNilm;
};

// Case `index` of the stream seeded by `seed`; depends on nothing else.
SyntheticCase generate_case(std::uint64_t seed, std::size_t index);

// Lexicon phrases that parse back to exactly their own (dimension, verdict),
// grouped per dimension and verdict.
class PhraseBook {
 public:
  explicit PhraseBook(const Lexicon& lexicon);
  static const PhraseBook& builtin();

  const std::vector<std::string>& phrases(MorphDimension d, Verdict v) const {
    return phrases_[index_of(d)][v == Verdict::kPositive ? 0 : 1];
  }
  const Lexicon& lexicon() const { return lexicon_; }

 private:
  const Lexicon& lexicon_;
  std::array<std::array<std::vector<std::string>, 2>, kDimensionCount> phrases_;
};

// Free text an annotator with `profile` would write for `c`. Deterministic in
// (case id, profile seed).
std::string render_annotator_text(const SyntheticCase& c, const AnnotatorProfile& profile, const PhraseBook& book);

// render_annotator_text followed by the real lexicon parse.
StructuredCaption simulate_annotator(const SyntheticCase& c, const AnnotatorProfile& profile,
                                     const PhraseBook& book = PhraseBook::builtin());

// Exact probability that fusing n i.i.d. full-coverage annotators of accuracy
// p yields the true verdict on one dimension, by enumerating all 2^n
// correctness patterns under the policy's vote rule. No consensus counts as
// incorrect. Throws kInvalidArgument unless 1 <= n <= 20 and p in [0,1].
double fused_accuracy_oracle(int n_annotators, double p, const FusionPolicy& policy);

struct TrialConfig {
  std::size_t n_cases = 1000;
  std::uint64_t seed = 0;
  std::vector<AnnotatorProfile> profiles;
  FusionPolicy policy;
};

// {"n_cases", "seed", "profiles": [...], "fusion": {...}}; kConfigInvalid on error.
TrialConfig trial_config_from_json(const nlohmann::json& j);

struct DimensionTally {
  std::size_t correct = 0;
  std::size_t asserted = 0;
};

struct TrialResult {
  std::size_t n_cases = 0;
  std::uint64_t seed = 0;
  std::array<DimensionTally, kDimensionCount> fused{};
  std::vector<std::string> profile_ids;
  std::vector<std::array<DimensionTally, kDimensionCount>> annotators;
  // Set when every profile has one accuracy and full coverage on all dimensions.
  std::optional<double> oracle;

  double fused_accuracy(MorphDimension d) const;
  double fused_mean() const;
  double annotator_accuracy(std::size_t a, MorphDimension d) const;
  double annotator_mean(std::size_t a) const;
};

// Generates cases, simulates every profile, runs the lexicon parse and
// fuse_consensus, and scores against ground truth. Accuracy is over all
// cases; a missing assertion is incorrect. Cases are processed in fixed
// partitions whose totals are summed, so results do not depend on threading.
TrialResult run_fusion_trial(const TrialConfig& config, const PhraseBook& book = PhraseBook::builtin());

nlohmann::json to_json(const TrialResult& r);
std::string render_trial(const TrialResult& r, ReportFormat format);

}  // namespace cytotext
