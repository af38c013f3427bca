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

#include "cytotext/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>
#include <thread>

#include "cytotext/digest.hpp"
#include "text_util.hpp"

namespace cytotext {

namespace {

constexpr const char* kFillerText = "Image reviewed.";

std::array<double, kDimensionCount> per_dimension(const nlohmann::json& j, const char* key, double fallback) {
  std::array<double, kDimensionCount> out;
  out.fill(fallback);
  if (!j.contains(key)) return out;
  const auto& v = j.at(key);
  if (v.is_number()) {
    out.fill(v.get<double>());
    return out;
  }
  if (!v.is_object()) throw Error(ErrorCode::kConfigInvalid, std::string(key) + " must be a number or an object");
  for (const auto& [code, p] : v.items()) {
    auto d = dimension_from_code(code);
    if (!d) throw Error(ErrorCode::kConfigInvalid, "unknown dimension code '" + code + "' in " + key);
    out[index_of(*d)] = p.get<double>();
  }
  return out;
}

}  // namespace

void validate(const AnnotatorProfile& p) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kConfigInvalid, "profile '" + p.profile_id + "': " + what);
  };
  for (std::size_t d = 0; d < kDimensionCount; ++d) {
    if (!(p.accuracy[d] >= 0.0 && p.accuracy[d] <= 1.0)) fail("accuracy must lie in [0,1]");
    if (!(p.coverage[d] >= 0.0 && p.coverage[d] <= 1.0)) fail("coverage must lie in [0,1]");
  }
  if (p.verbosity.empty()) fail("verbosity needs at least one template");
  for (const auto& t : p.verbosity) {
    if (t.find("{phrase}") == std::string::npos) fail("verbosity template without {phrase}: " + t);
  }
}

AnnotatorProfile profile_from_json(const nlohmann::json& j) {
  AnnotatorProfile p;
  try {
    p.profile_id = j.at("profile_id").get<std::string>();
    p.accuracy = per_dimension(j, "accuracy", 1.0);
    p.coverage = per_dimension(j, "coverage", 1.0);
    if (j.contains("verbosity")) p.verbosity = j.at("verbosity").get<std::vector<std::string>>();
    p.seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kConfigInvalid, std::string("malformed profile: ") + ex.what());
  }
  validate(p);
  return p;
}

nlohmann::json to_json(const AnnotatorProfile& p) {
  nlohmann::json acc, cov;
  for (const auto& d : kDimensions) {
    acc[std::string(d.code)] = p.accuracy[index_of(d.dimension)];
    cov[std::string(d.code)] = p.coverage[index_of(d.dimension)];
  }
  return {{"profile_id", p.profile_id}, {"accuracy", acc}, {"coverage", cov}, {"verbosity", p.verbosity},
          {"seed", p.seed}};
}

SyntheticCase generate_case(std::uint64_t seed, std::size_t index) {
  SyntheticCase c;
  char id[32];
  std::snprintf(id, sizeof id, "case-%06zu", index);
  c.case_id = id;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(index)));
  for (auto& v : c.truth) v = uniform01(rng) < 0.5 ? Verdict::kPositive : Verdict::kNegative;
  c.tbs = static_cast<TbsCategory>(uniform_below(rng, kTbsCount));
  return c;
}

PhraseBook::PhraseBook(const Lexicon& lexicon) : lexicon_(lexicon) {
  for (const auto& e : lexicon.entries()) {
    auto parsed = parse_structured_caption(e.phrase, lexicon);
    if (parsed.assertions.size() != 1) continue;
    const auto& [d, a] = *parsed.assertions.begin();
    if (d != e.dimension || a.verdict != e.verdict) continue;
    auto& bucket = phrases_[index_of(d)][e.verdict == Verdict::kPositive ? 0 : 1];
    if (std::find(bucket.begin(), bucket.end(), e.phrase) == bucket.end()) bucket.push_back(e.phrase);
  }
  for (const auto& d : kDimensions) {
    for (int v = 0; v < 2; ++v) {
      if (phrases_[index_of(d.dimension)][v].empty()) {
        throw Error(ErrorCode::kLexiconInvalid, "lexicon has no unambiguous " +
                                                    std::string(v == 0 ? "positive" : "negative") +
                                                    " phrase for " + std::string(d.code));
      }
    }
  }
}

const PhraseBook& PhraseBook::builtin() {
  static const PhraseBook book(Lexicon::builtin());
  return book;
}

std::string render_annotator_text(const SyntheticCase& c, const AnnotatorProfile& profile, const PhraseBook& book) {
  Rng rng(derive_seed(profile.seed, c.case_id));
  std::vector<std::string> sentences;
  for (std::size_t d = 0; d < kDimensionCount; ++d) {
    // Four draws per dimension whatever the branch, so one dimension's
    // outcome never shifts the stream seen by the next.
    const double u_cover = uniform01(rng);
    const double u_correct = uniform01(rng);
    const auto pick_phrase = rng();
    const auto pick_template = rng();
    if (!(u_cover < profile.coverage[d])) continue;
    auto verdict = u_correct < profile.accuracy[d] ? c.truth[d] : flip(c.truth[d]);
    const auto& phrases = book.phrases(kDimensions[d].dimension, verdict);
    const auto& phrase = phrases[pick_phrase % phrases.size()];
    const auto& tmpl = profile.verbosity[pick_template % profile.verbosity.size()];
    sentences.push_back(replace_all(tmpl, "{phrase}", phrase));
  }
  if (sentences.empty()) return kFillerText;
  return join(sentences, " ");
}

StructuredCaption simulate_annotator(const SyntheticCase& c, const AnnotatorProfile& profile,
                                     const PhraseBook& book) {
  return parse_structured_caption(render_annotator_text(c, profile, book), book.lexicon());
}

double fused_accuracy_oracle(int n, double p, const FusionPolicy& policy) {
  if (n < 1 || n > 20) throw Error(ErrorCode::kInvalidArgument, "oracle supports 1..20 annotators");
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::kInvalidArgument, "accuracy must lie in [0,1]");
  validate(policy);
  if (n < policy.min_coverage) return 0.0;
  double total = 0.0;
  for (std::uint32_t pattern = 0; pattern < (1u << n); ++pattern) {
    const int right = std::popcount(pattern);
    const int wrong = n - right;
    bool decided = right > wrong && (policy.min_votes ? right >= *policy.min_votes : 2 * right > n);
    if (decided) total += std::pow(p, right) * std::pow(1.0 - p, wrong);
  }
  return total;
}

TrialConfig trial_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kConfigInvalid, "trial config must be a JSON object");
  static const std::set<std::string> kKeys{"n_cases", "seed", "profiles", "fusion"};
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw Error(ErrorCode::kConfigInvalid, "unknown trial config key '" + key + "'");
  }
  TrialConfig c;
  try {
    auto n = j.value("n_cases", std::int64_t{1000});
    if (n < 1) throw Error(ErrorCode::kConfigInvalid, "n_cases must be >= 1");
    c.n_cases = static_cast<std::size_t>(n);
    c.seed = j.value("seed", std::uint64_t{0});
    std::set<std::string> ids;
    for (const auto& p : j.at("profiles")) {
      c.profiles.push_back(profile_from_json(p));
      if (!ids.insert(c.profiles.back().profile_id).second) {
        throw Error(ErrorCode::kConfigInvalid, "duplicate profile_id '" + c.profiles.back().profile_id + "'");
      }
    }
    if (j.contains("fusion")) c.policy = policy_from_json(j.at("fusion"));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kConfigInvalid, std::string("malformed trial config: ") + ex.what());
  } catch (const Error& err) {
    if (err.code() == ErrorCode::kConfigInvalid) throw;
    throw Error(ErrorCode::kConfigInvalid, err.what());
  }
  if (c.profiles.empty()) throw Error(ErrorCode::kConfigInvalid, "trial needs at least one profile");
  return c;
}

double TrialResult::fused_accuracy(MorphDimension d) const {
  return n_cases ? static_cast<double>(fused[index_of(d)].correct) / static_cast<double>(n_cases) : 0.0;
}

double TrialResult::fused_mean() const {
  double s = 0.0;
  for (const auto& d : kDimensions) s += fused_accuracy(d.dimension);
  return s / static_cast<double>(kDimensionCount);
}

double TrialResult::annotator_accuracy(std::size_t a, MorphDimension d) const {
  return n_cases ? static_cast<double>(annotators[a][index_of(d)].correct) / static_cast<double>(n_cases) : 0.0;
}

double TrialResult::annotator_mean(std::size_t a) const {
  double s = 0.0;
  for (const auto& d : kDimensions) s += annotator_accuracy(a, d.dimension);
  return s / static_cast<double>(kDimensionCount);
}

namespace {

constexpr std::size_t kPartitionSize = 1024;

struct Partial {
  std::array<DimensionTally, kDimensionCount> fused{};
  std::vector<std::array<DimensionTally, kDimensionCount>> annotators;
};

void tally(std::array<DimensionTally, kDimensionCount>& into, const std::map<MorphDimension, DimensionAssertion>& got,
           const SyntheticCase& c) {
  for (const auto& [d, a] : got) {
    auto i = index_of(d);
    ++into[i].asserted;
    if (a.verdict == c.truth[i]) ++into[i].correct;
  }
}

void add(std::array<DimensionTally, kDimensionCount>& into, const std::array<DimensionTally, kDimensionCount>& from) {
  for (std::size_t i = 0; i < kDimensionCount; ++i) {
    into[i].correct += from[i].correct;
    into[i].asserted += from[i].asserted;
  }
}

Partial run_partition(const TrialConfig& config, const PhraseBook& book, std::size_t begin, std::size_t end) {
  Partial part;
  part.annotators.resize(config.profiles.size());
  std::vector<AnnotatorCaption> captions(config.profiles.size());
  for (std::size_t i = begin; i < end; ++i) {
    auto c = generate_case(config.seed, i);
    for (std::size_t a = 0; a < config.profiles.size(); ++a) {
      captions[a].endpoint_id = config.profiles[a].profile_id;
      captions[a].caption = simulate_annotator(c, config.profiles[a], book);
      tally(part.annotators[a], captions[a].caption.assertions, c);
    }
    tally(part.fused, fuse_consensus(captions, config.policy).consensus, c);
  }
  return part;
}

void check_templates(const AnnotatorProfile& p, const Lexicon& lexicon) {
  for (const auto& t : p.verbosity) {
    auto bare = replace_all(t, "{phrase}", "");
    if (trim(bare).empty()) continue;
    if (!parse_structured_caption(bare, lexicon).assertions.empty()) {
      throw Error(ErrorCode::kConfigInvalid,
                  "profile '" + p.profile_id + "': verbosity template itself matches lexicon phrases: " + t);
    }
  }
}

}  // namespace

TrialResult run_fusion_trial(const TrialConfig& config, const PhraseBook& book) {
  if (config.n_cases < 1) throw Error(ErrorCode::kInvalidArgument, "n_cases must be >= 1");
  if (config.profiles.empty()) throw Error(ErrorCode::kInvalidArgument, "trial needs at least one profile");
  validate(config.policy);
  for (const auto& p : config.profiles) {
    validate(p);
    check_templates(p, book.lexicon());
  }

  const std::size_t n_parts = (config.n_cases + kPartitionSize - 1) / kPartitionSize;
  std::vector<Partial> parts(n_parts);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < n_parts;) {
      try {
        parts[k] = run_partition(config, book, k * kPartitionSize, std::min(config.n_cases, (k + 1) * kPartitionSize));
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    auto width = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 16);
    for (std::size_t i = 0; i < std::min(width, n_parts); ++i) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  TrialResult r;
  r.n_cases = config.n_cases;
  r.seed = config.seed;
  r.annotators.resize(config.profiles.size());
  for (const auto& p : config.profiles) r.profile_ids.push_back(p.profile_id);
  for (const auto& part : parts) {
    add(r.fused, part.fused);
    for (std::size_t a = 0; a < part.annotators.size(); ++a) add(r.annotators[a], part.annotators[a]);
  }

  const double p0 = config.profiles.front().accuracy.front();
  bool iid = config.profiles.size() <= 20;
  for (const auto& p : config.profiles) {
    for (std::size_t d = 0; d < kDimensionCount; ++d) iid = iid && p.accuracy[d] == p0 && p.coverage[d] == 1.0;
  }
  if (iid) r.oracle = fused_accuracy_oracle(static_cast<int>(config.profiles.size()), p0, config.policy);
  return r;
}

namespace {

nlohmann::json tallies_to_json(const std::array<DimensionTally, kDimensionCount>& t, std::size_t n) {
  auto groups = nlohmann::json::array();
  double sum = 0.0;
  for (std::size_t d = 0; d < kDimensionCount; ++d) {
    double acc = n ? static_cast<double>(t[d].correct) / static_cast<double>(n) : 0.0;
    sum += acc;
    groups.push_back({{"group", kDimensions[d].code},
                      {"correct", t[d].correct},
                      {"asserted", t[d].asserted},
                      {"total", n},
                      {"accuracy", acc}});
  }
  return {{"groups", std::move(groups)}, {"mean_accuracy", sum / static_cast<double>(kDimensionCount)}};
}

std::string fraction(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

nlohmann::json to_json(const TrialResult& r) {
  auto annotators = nlohmann::json::array();
  for (std::size_t a = 0; a < r.annotators.size(); ++a) {
    auto j = tallies_to_json(r.annotators[a], r.n_cases);
    j["profile_id"] = r.profile_ids[a];
    annotators.push_back(std::move(j));
  }
  return {{"n_cases", r.n_cases},
          {"seed", r.seed},
          {"fused", tallies_to_json(r.fused, r.n_cases)},
          {"annotators", std::move(annotators)},
          {"oracle_fused_accuracy", r.oracle ? nlohmann::json(*r.oracle) : nlohmann::json()}};
}

std::string render_trial(const TrialResult& r, ReportFormat format) {
  if (format == ReportFormat::kJson) return to_json(r).dump(2) + "\n";
  std::vector<std::string> names{"fused"};
  for (const auto& id : r.profile_ids) names.push_back(id);
  std::size_t first = 6;
  for (const auto& n : names) first = std::max(first, n.size());

  auto cell = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  std::string out = "Source" + std::string(first - 6, ' ');
  for (const auto& d : kDimensions) out += "  " + cell(std::string(d.code), std::max<std::size_t>(d.code.size(), 6));
  out += "  " + cell("Avg", 6) + "\n";
  for (std::size_t row = 0; row < names.size(); ++row) {
    out += names[row] + std::string(first - names[row].size(), ' ');
    for (const auto& d : kDimensions) {
      double v = row == 0 ? r.fused_accuracy(d.dimension) : r.annotator_accuracy(row - 1, d.dimension);
      out += "  " + cell(fraction(v), std::max<std::size_t>(d.code.size(), 6));
    }
    out += "  " + cell(fraction(row == 0 ? r.fused_mean() : r.annotator_mean(row - 1)), 6) + "\n";
  }
  out += "cases: " + std::to_string(r.n_cases) + "  seed: " + std::to_string(r.seed) + "\n";
  out += "fused mean accuracy: " + fraction(r.fused_mean()) + "\n";
  if (r.oracle) out += "oracle fused accuracy: " + fraction(*r.oracle) + "\n";
  return out;
}

}  // namespace cytotext
