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

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cytotext/schema.hpp"

namespace cytotext {

struct LexiconEntry {
  MorphDimension dimension{};
  Verdict verdict{Verdict::kPositive};
  double base_confidence = 1.0;
  std::string phrase;
};

// Phrase table mapping free text onto dimension verdicts.
//
// File format, one entry per line, tab separated:
//
//   <dimension-code>\t<+|->\t<base-confidence>\t<phrase>
//
// Blank lines and lines starting with '#' are ignored. Phrases match
// case-insensitively on word boundaries, with '-' and '_' treated as spaces.
// Construction enforces that every dimension has at least one entry of each
// polarity and that no phrase is listed with both verdicts.
class Lexicon {
 public:
  explicit Lexicon(std::vector<LexiconEntry> entries);

  static Lexicon parse(std::string_view text, std::string_view source = "<lexicon>");
  static Lexicon load(const std::filesystem::path& path);

  // The lexicon shipped in data/default_lexicon.tsv, compiled in.
  static const Lexicon& builtin();
  static std::string_view builtin_text();

  const std::vector<LexiconEntry>& entries() const { return entries_; }
  const std::vector<std::string>& normalized_phrases() const { return normalized_; }

  // Canonical text form (the file format above); used for config hashing.
  std::string to_text() const;

 private:
  std::vector<LexiconEntry> entries_;
  std::vector<std::string> normalized_;
};

// Maps free text onto a StructuredCaption. Each dimension with at least one
// matching entry gets an assertion; when both verdicts match, the verdict with
// the larger summed base confidence wins and the confidence is
// winning-sum / total-sum. An exact tie leaves the dimension unasserted.
// The narrative is `raw` verbatim. Throws Error(kEmptyCaption) on blank input.
StructuredCaption parse_structured_caption(std::string_view raw, const Lexicon& lexicon);

// Same matching, restricted to one dimension. nullopt when nothing decisive matched.
std::optional<DimensionAssertion> parse_dimension(std::string_view raw, MorphDimension dimension,
                                                  const Lexicon& lexicon);

}  // namespace cytotext
