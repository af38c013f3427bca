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

#include "cytotext/lexicon.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "cytotext/error.hpp"
#include "text_match.hpp"
#include "text_util.hpp"

namespace cytotext {

extern const char* const kBuiltinLexiconText;

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string format_confidence(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

struct Tally {
  double positive = 0.0;
  double negative = 0.0;
  std::vector<std::size_t> positive_entries;
  std::vector<std::size_t> negative_entries;
};

std::optional<DimensionAssertion> resolve(MorphDimension d, const Tally& t, const Lexicon& lex) {
  if (t.positive == t.negative) return std::nullopt;
  const bool pos = t.positive > t.negative;
  DimensionAssertion a;
  a.dimension = d;
  a.verdict = pos ? Verdict::kPositive : Verdict::kNegative;
  a.confidence = (pos ? t.positive : t.negative) / (t.positive + t.negative);
  std::vector<std::string> phrases;
  for (auto idx : pos ? t.positive_entries : t.negative_entries) {
    const auto& phrase = lex.entries()[idx].phrase;
    if (std::find(phrases.begin(), phrases.end(), phrase) == phrases.end()) phrases.push_back(phrase);
  }
  a.evidence = join(phrases, "; ");
  return a;
}

std::array<Tally, kDimensionCount> tally(std::string_view raw, const Lexicon& lexicon) {
  std::array<Tally, kDimensionCount> out{};
  const auto text = normalize_for_match(raw);
  for (const auto& m : find_phrases(text, lexicon.normalized_phrases())) {
    const auto& e = lexicon.entries()[m.pattern];
    auto& t = out[index_of(e.dimension)];
    if (e.verdict == Verdict::kPositive) {
      t.positive += e.base_confidence;
      t.positive_entries.push_back(m.pattern);
    } else {
      t.negative += e.base_confidence;
      t.negative_entries.push_back(m.pattern);
    }
  }
  return out;
}

}  // namespace

Lexicon::Lexicon(std::vector<LexiconEntry> entries) : entries_(std::move(entries)) {
  std::array<bool, kDimensionCount> has_pos{}, has_neg{};
  std::map<std::string, Verdict> seen;
  normalized_.reserve(entries_.size());
  for (const auto& e : entries_) {
    if (!(e.base_confidence >= 0.0 && e.base_confidence <= 1.0)) {
      throw Error(ErrorCode::kLexiconInvalid,
                  "base confidence outside [0,1] for phrase '" + e.phrase + "'");
    }
    auto norm = normalize_for_match(e.phrase);
    if (norm.empty()) throw Error(ErrorCode::kLexiconInvalid, "empty lexicon phrase");
    auto [it, inserted] = seen.emplace(norm, e.verdict);
    if (!inserted && it->second != e.verdict) {
      throw Error(ErrorCode::kLexiconInvalid,
                  "phrase '" + e.phrase + "' is listed with conflicting verdicts");
    }
    (e.verdict == Verdict::kPositive ? has_pos : has_neg)[index_of(e.dimension)] = true;
    normalized_.push_back(std::move(norm));
  }
  for (const auto& d : kDimensions) {
    if (!has_pos[index_of(d.dimension)] || !has_neg[index_of(d.dimension)]) {
      throw Error(ErrorCode::kLexiconInvalid, "dimension " + std::string(d.code) +
                                                  " needs at least one '+' and one '-' entry");
    }
  }
}

Lexicon Lexicon::parse(std::string_view text, std::string_view source) {
  std::vector<LexiconEntry> entries;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto nl = text.find('\n', start);
    auto line = text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start);
    start = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || trim(line).front() == '#') continue;

    auto where = std::string(source) + ":" + std::to_string(line_no);
    auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw Error(ErrorCode::kLexiconInvalid, where + ": expected 4 tab-separated fields");
    }
    LexiconEntry e;
    auto dim = dimension_from_code(trim(fields[0]));
    if (!dim) throw Error(ErrorCode::kLexiconInvalid, where + ": unknown dimension '" + std::string(fields[0]) + "'");
    e.dimension = *dim;
    auto pol = trim(fields[1]);
    if (pol == "+") e.verdict = Verdict::kPositive;
    else if (pol == "-") e.verdict = Verdict::kNegative;
    else throw Error(ErrorCode::kLexiconInvalid, where + ": verdict must be '+' or '-'");
    auto conf = std::string(trim(fields[2]));
    try {
      std::size_t used = 0;
      e.base_confidence = std::stod(conf, &used);
      if (used != conf.size()) throw std::invalid_argument(conf);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kLexiconInvalid, where + ": bad confidence '" + conf + "'");
    }
    e.phrase = std::string(trim(fields[3]));
    entries.push_back(std::move(e));
  }
  try {
    return Lexicon(std::move(entries));
  } catch (const Error& err) {
    throw Error(err.code(), std::string(source) + ": " + err.what());
  }
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open lexicon file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string_view Lexicon::builtin_text() { return kBuiltinLexiconText; }

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = parse(kBuiltinLexiconText, "default_lexicon.tsv");
  return lex;
}

std::string Lexicon::to_text() const {
  std::string out;
  for (const auto& e : entries_) {
    out += info(e.dimension).code;
    out += '\t';
    out += e.verdict == Verdict::kPositive ? '+' : '-';
    out += '\t';
    out += format_confidence(e.base_confidence);
    out += '\t';
    out += e.phrase;
    out += '\n';
  }
  return out;
}

StructuredCaption parse_structured_caption(std::string_view raw, const Lexicon& lexicon) {
  if (trim(raw).empty()) throw Error(ErrorCode::kEmptyCaption, "caption text is empty");
  StructuredCaption caption;
  caption.narrative = std::string(raw);
  auto tallies = tally(raw, lexicon);
  for (const auto& d : kDimensions) {
    if (auto a = resolve(d.dimension, tallies[index_of(d.dimension)], lexicon)) {
      caption.assertions.emplace(d.dimension, std::move(*a));
    }
  }
  return caption;
}

std::optional<DimensionAssertion> parse_dimension(std::string_view raw, MorphDimension dimension,
                                                  const Lexicon& lexicon) {
  if (trim(raw).empty()) return std::nullopt;
  auto tallies = tally(raw, lexicon);
  return resolve(dimension, tallies[index_of(dimension)], lexicon);
}

}  // namespace cytotext
