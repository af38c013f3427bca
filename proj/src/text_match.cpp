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

#include "text_match.hpp"

#include <algorithm>
#include <cctype>

#include "text_util.hpp"

namespace cytotext {

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool boundary_before(std::string_view text, std::size_t pos) {
  return pos == 0 || !is_word_char(text[pos - 1]) || !is_word_char(text[pos]);
}

bool boundary_after(std::string_view text, std::size_t end) {
  return end == text.size() || !is_word_char(text[end]) || !is_word_char(text[end - 1]);
}

}  // namespace

std::string normalize_for_match(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char raw : text) {
    char c = ascii_lower(raw);
    if (c == '-' || c == '_') c = ' ';
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::vector<PhraseMatch> find_phrases(std::string_view text,
                                      const std::vector<std::string>& patterns) {
  std::vector<PhraseMatch> found;
  for (std::size_t p = 0; p < patterns.size(); ++p) {
    const auto& pat = patterns[p];
    if (pat.empty()) continue;
    for (auto pos = text.find(pat); pos != std::string_view::npos; pos = text.find(pat, pos + 1)) {
      auto end = pos + pat.size();
      if (boundary_before(text, pos) && boundary_after(text, end)) found.push_back({p, pos, end});
    }
  }

  std::vector<PhraseMatch> kept;
  kept.reserve(found.size());
  for (const auto& m : found) {
    bool inside_longer = std::any_of(found.begin(), found.end(), [&](const PhraseMatch& o) {
      return o.begin <= m.begin && m.end <= o.end && (o.end - o.begin) > (m.end - m.begin);
    });
    if (!inside_longer) kept.push_back(m);
  }
  std::sort(kept.begin(), kept.end(), [](const PhraseMatch& a, const PhraseMatch& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.pattern < b.pattern;
  });
  return kept;
}

}  // namespace cytotext
