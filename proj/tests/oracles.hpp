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

// Reference implementations for test comparisons. Written from the metric
// definitions alone and deliberately naive; they share no code with the
// library.

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

// Outcome of a single-dimension vote among annotators.
struct Vote {
  bool decided = false;
  bool verdict = false;  // true = positive; meaningful when decided
};

// Counts votes one by one. `ballots` holds one entry per annotator:
// nullopt (did not address the dimension), true (positive), false (negative).
// Rule: at least `min_coverage` ballots cast; the leading verdict must have
// strictly more votes than the other; without `min_votes` it also needs more
// than half of the ballots cast, with `min_votes` at least that many votes.
inline Vote count_votes(const std::vector<std::optional<bool>>& ballots, int min_coverage,
                        std::optional<int> min_votes) {
  int cast = 0, yes = 0, no = 0;
  for (const auto& b : ballots) {
    if (!b.has_value()) continue;
    cast = cast + 1;
    if (*b) {
      yes = yes + 1;
    } else {
      no = no + 1;
    }
  }
  Vote v;
  if (cast < min_coverage) return v;
  int lead = yes > no ? yes : no;
  int trail = yes > no ? no : yes;
  if (lead == trail) return v;
  bool enough = min_votes.has_value() ? lead >= *min_votes : lead * 2 > cast;
  if (!enough) return v;
  v.decided = true;
  v.verdict = yes > no;
  return v;
}

// P(majority of n independent voters of accuracy p is right), by the binomial
// sum over winning counts k > n/2.
inline double majority_accuracy(int n, double p) {
  double total = 0.0;
  for (int k = 0; k <= n; ++k) {
    if (2 * k <= n) continue;
    double c = 1.0;
    for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
    total += c * std::pow(p, k) * std::pow(1.0 - p, n - k);
  }
  return total;
}

// Percent correct per group by rescanning the item list for each group.
struct Scored {
  std::string group;
  std::string truth;
  std::optional<std::string> predicted;
};

inline std::map<std::string, double> recount_accuracy(const std::vector<Scored>& items) {
  std::map<std::string, double> out;
  std::vector<std::string> groups;
  for (const auto& it : items) {
    bool seen = false;
    for (const auto& g : groups) seen = seen || g == it.group;
    if (!seen) groups.push_back(it.group);
  }
  for (const auto& g : groups) {
    double right = 0, all = 0;
    for (const auto& it : items) {
      if (it.group != g) continue;
      all += 1;
      if (it.predicted && *it.predicted == it.truth) right += 1;
    }
    out[g] = right / all * 100.0;
  }
  return out;
}

inline double mean_of(const std::map<std::string, double>& m) {
  double s = 0;
  for (const auto& [_, v] : m) s += v;
  return s / static_cast<double>(m.size());
}

// Agreeing and total rater pairs over a list of per-item verdict lists.
inline std::pair<long, long> pair_agreement(const std::vector<std::vector<bool>>& per_item) {
  long agree = 0, total = 0;
  for (const auto& verdicts : per_item) {
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
      for (std::size_t j = i + 1; j < verdicts.size(); ++j) {
        total += 1;
        if (verdicts[i] == verdicts[j]) agree += 1;
      }
    }
  }
  return {agree, total};
}

}  // namespace oracle
