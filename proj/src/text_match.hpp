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

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cytotext {

// Lowercases ASCII, maps '-' and '_' to spaces and collapses whitespace runs,
// so "Normal-sized  Nucleus" and "normal sized nucleus" compare equal.
std::string normalize_for_match(std::string_view text);

struct PhraseMatch {
  std::size_t pattern;  // index into the pattern list
  std::size_t begin;    // offsets into the normalized text
  std::size_t end;
};

// Finds every word-bounded occurrence of each (already normalized) pattern in
// `normalized_text`. A match whose span lies strictly inside a longer match is
// dropped, so "no nuclear atypia" does not also count as "nuclear atypia".
// Results are ordered by (begin, pattern).
std::vector<PhraseMatch> find_phrases(std::string_view normalized_text,
                                      const std::vector<std::string>& patterns);

}  // namespace cytotext
