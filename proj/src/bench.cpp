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

#include "cytotext/bench.hpp"

#include <atomic>
#include <cstdio>
#include <functional>
#include <set>
#include <thread>

#include "cytotext/digest.hpp"
#include "log.hpp"
#include "text_match.hpp"
#include "text_util.hpp"

namespace cytotext {

namespace {

// Lowercase, punctuation to spaces, single-spaced.
std::string words_only(std::string_view text) {
  std::string s(text);
  for (auto& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c))) c = ' ';
  }
  return normalize_for_match(s);
}

std::optional<Verdict> option_letter(std::string_view raw) {
  auto t = trim(raw);
  if (t.empty()) return std::nullopt;
  auto letter = [](char c) -> std::optional<Verdict> {
    if (c == 'A') return Verdict::kPositive;
    if (c == 'B') return Verdict::kNegative;
    return std::nullopt;
  };
  if (t.size() >= 3 && t[0] == '(' && t[2] == ')') return letter(t[1]);
  if (t.size() == 1 || t[1] == ')' || t[1] == '.' || t[1] == ':') {
    if (auto v = letter(t[0])) return v;
  }
  bool a = t.find("(A)") != std::string_view::npos;
  bool b = t.find("(B)") != std::string_view::npos;
  if (a != b) return a ? Verdict::kPositive : Verdict::kNegative;
  return std::nullopt;
}

}  // namespace

std::optional<Verdict> extract_binary_answer(std::string_view raw, MorphDimension dimension,
                                             const Lexicon& lexicon) {
  const auto words = words_only(raw);
  if (words.empty()) return std::nullopt;

  auto first = words.substr(0, words.find(' '));
  if (first == "yes") return Verdict::kPositive;
  if (first == "no") return Verdict::kNegative;

  if (auto v = option_letter(raw)) return v;

  const auto& d = info(dimension);
  const std::vector<std::string> patterns{words_only(d.positive_label), "yes", words_only(d.negative_label), "no"};
  bool pos = false, neg = false;
  for (const auto& m : find_phrases(words, patterns)) (m.pattern < 2 ? pos : neg) = true;
  if (pos != neg) return pos ? Verdict::kPositive : Verdict::kNegative;

  if (auto a = parse_dimension(raw, dimension, lexicon)) return a->verdict;
  return std::nullopt;
}

namespace {

struct TbsPatterns {
  std::vector<std::string> patterns;
  std::vector<TbsCategory> category;
};

const TbsPatterns& tbs_patterns() {
  static const TbsPatterns table = [] {
    TbsPatterns t;
    auto add = [&](TbsCategory c, std::string_view text) {
      t.patterns.push_back(words_only(text));
      t.category.push_back(c);
    };
    for (const auto& c : kTbsCategories) {
      add(c.category, c.code);
      add(c.category, c.display_name);
    }
    add(TbsCategory::kAscUs, "ascus");
    add(TbsCategory::kAscH, "asch");
    add(TbsCategory::kLsil, "low grade squamous intraepithelial lesion");
    add(TbsCategory::kHsil, "high grade squamous intraepithelial lesion");
    add(TbsCategory::kAscH, "atypical squamous cells cannot exclude high grade squamous intraepithelial lesion");
    add(TbsCategory::kAscH, "atypical squamous cells cannot exclude a high grade squamous intraepithelial lesion");
    add(TbsCategory::kNilm, "negative for intraepithelial lesion");
    return t;
  }();
  return table;
}

}  // namespace

std::optional<TbsCategory> extract_tbs_answer(std::string_view raw) {
  const auto words = words_only(raw);
  if (words.empty()) return std::nullopt;
  const auto& table = tbs_patterns();
  std::set<TbsCategory> found;
  for (const auto& m : find_phrases(words, table.patterns)) found.insert(table.category[m.pattern]);
  if (found.size() != 1) return std::nullopt;
  return *found.begin();
}

// --- manifests ----------------------------------------------------------------

namespace {

template <typename Item, typename Fn>
std::vector<Item> parse_items(std::string_view text, std::string_view source, Fn&& from_json) {
  std::vector<Item> out;
  std::set<std::string> ids;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto line = trim(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    start = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    auto where = std::string(source) + ":" + std::to_string(line_no);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kManifestInvalid, where + ": not a JSON object");
    Item item;
    try {
      item.item_id = j.at("item_id").get<std::string>();
      auto tile = j.at("tile");
      if (!tile.contains("tile_id")) tile["tile_id"] = item.item_id;
      item.tile = tile_from_json(tile);
      from_json(j, item);
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kManifestInvalid, where + ": " + ex.what());
    } catch (const Error& err) {
      throw Error(ErrorCode::kManifestInvalid, where + ": " + err.what());
    }
    if (item.item_id.empty()) throw Error(ErrorCode::kManifestInvalid, where + ": empty item_id");
    if (!ids.insert(item.item_id).second) {
      throw Error(ErrorCode::kManifestInvalid, where + ": duplicate item_id '" + item.item_id + "'");
    }
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace

std::vector<MorphoBenchItem> parse_morpho_manifest(std::string_view text, std::string_view source) {
  return parse_items<MorphoBenchItem>(text, source, [](const nlohmann::json& j, MorphoBenchItem& item) {
    item.dimension = dimension_from_json(j.at("dimension"));
    item.ground_truth = verdict_from_json(j.at("ground_truth"));
  });
}

std::vector<CytoBenchItem> parse_cyto_manifest(std::string_view text, std::string_view source) {
  return parse_items<CytoBenchItem>(text, source, [](const nlohmann::json& j, CytoBenchItem& item) {
    auto code = j.at("ground_truth").get<std::string>();
    auto c = tbs_from_code(code);
    if (!c) throw Error(ErrorCode::kManifestInvalid, "unknown TBS category '" + code + "'");
    item.ground_truth = *c;
  });
}

// --- scoring ------------------------------------------------------------------

namespace {

void finish_accuracy(EvalReport& r) {
  double sum = 0.0;
  std::size_t represented = 0;
  r.accuracy.assign(r.groups.size(), std::nullopt);
  for (std::size_t g = 0; g < r.groups.size(); ++g) {
    if (r.group_total[g] == 0) continue;
    double acc = static_cast<double>(r.group_correct[g]) * 100.0 / static_cast<double>(r.group_total[g]);
    r.accuracy[g] = acc;
    sum += acc;
    ++represented;
  }
  if (represented) r.macro_average = sum / static_cast<double>(represented);
}

}  // namespace

EvalReport score_morpho(std::span<const MorphoOutcome> outcomes) {
  EvalReport r;
  r.kind = BenchKind::kMorpho;
  for (const auto& d : kDimensions) {
    r.groups.emplace_back(d.code);
    r.confusion.rows.push_back(std::string(d.code) + ":positive");
    r.confusion.rows.push_back(std::string(d.code) + ":negative");
  }
  r.confusion.columns = {"positive", "negative", "unparseable"};
  r.confusion.counts.assign(r.confusion.rows.size(), std::vector<std::size_t>(3, 0));
  r.group_correct.assign(kDimensionCount, 0);
  r.group_total.assign(kDimensionCount, 0);

  for (const auto& o : outcomes) {
    auto g = index_of(o.dimension);
    auto row = 2 * g + (o.truth == Verdict::kPositive ? 0 : 1);
    auto col = !o.predicted ? 2 : (*o.predicted == Verdict::kPositive ? 0 : 1);
    ++r.confusion.counts[row][col];
    ++r.group_total[g];
    if (o.predicted == o.truth) ++r.group_correct[g];
    if (!o.predicted) ++r.n_unparseable;
    ++r.n_items;
  }
  finish_accuracy(r);
  return r;
}

EvalReport score_tbs(std::span<const TbsOutcome> outcomes) {
  EvalReport r;
  r.kind = BenchKind::kTbs;
  for (const auto& c : kTbsCategories) {
    r.groups.emplace_back(c.code);
    r.confusion.rows.emplace_back(c.code);
    r.confusion.columns.emplace_back(c.code);
  }
  r.confusion.columns.emplace_back("unparseable");
  r.confusion.counts.assign(kTbsCount, std::vector<std::size_t>(kTbsCount + 1, 0));
  r.group_correct.assign(kTbsCount, 0);
  r.group_total.assign(kTbsCount, 0);

  for (const auto& o : outcomes) {
    auto g = index_of(o.truth);
    auto col = o.predicted ? index_of(*o.predicted) : kTbsCount;
    ++r.confusion.counts[g][col];
    ++r.group_total[g];
    if (o.predicted == o.truth) ++r.group_correct[g];
    if (!o.predicted) ++r.n_unparseable;
    ++r.n_items;
  }
  finish_accuracy(r);
  return r;
}

// --- evaluation ---------------------------------------------------------------

namespace {

// Runs `query` for every index on up to `width` threads; a throwing query
// leaves its slot empty.
std::vector<std::optional<std::string>> query_all(std::size_t n, int width,
                                                  const std::function<std::string(std::size_t)>& query) {
  std::vector<std::optional<std::string>> replies(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < n;) {
      try {
        replies[k] = query(k);
      } catch (const std::exception& ex) {
        log_message(LogLevel::kDebug, std::string("bench item failed: ") + ex.what());
      }
    }
  };
  std::vector<std::jthread> pool;
  auto threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(width, 1)), n);
  for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(work);
  return replies;
}

std::string eval_hash(std::string_view bench, const EndpointConfig& model, const std::string& system,
                      const std::string& question, std::string_view lexicon_text) {
  nlohmann::json j{{"bench", bench},
                   {"model", model.model_name},
                   {"system", system},
                   {"question", question},
                   {"temperature", model.temperature},
                   {"lexicon", lexicon_text}};
  return sha256_hex(j.dump());
}

std::string morpho_question(const PromptSet& prompts, MorphDimension d) {
  auto q = replace_all(prompts.morpho_question, "{dimension_name}", info(d).display_name);
  q = replace_all(q, "{positive_label}", info(d).positive_label);
  return replace_all(q, "{negative_label}", info(d).negative_label);
}

}  // namespace

EvalReport evaluate_morpho(std::span<const MorphoBenchItem> items, const EndpointConfig& model,
                           const PromptSet& prompts, const Lexicon& lexicon, ChatClient& client,
                           const EvalOptions& options) {
  if (items.empty()) throw Error(ErrorCode::kInvalidArgument, "benchmark has no items");
  auto replies = query_all(items.size(), model.max_in_flight, [&](std::size_t k) {
    const auto& item = items[k];
    auto image = load_image_bytes(item.tile, options.image_root);
    auto req = make_request(model, prompts.bench_system, morpho_question(prompts, item.dimension), image,
                            item.tile.media_type);
    return client.send_chat(model, req).text;
  });
  std::vector<MorphoOutcome> outcomes;
  outcomes.reserve(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) {
    std::optional<Verdict> predicted;
    if (replies[k]) predicted = extract_binary_answer(*replies[k], items[k].dimension, lexicon);
    outcomes.push_back({items[k].dimension, items[k].ground_truth, predicted});
  }
  auto report = score_morpho(outcomes);
  report.model_name = model.model_name;
  report.run_config_hash = eval_hash("morpho", model, prompts.bench_system, prompts.morpho_question,
                                     lexicon.to_text());
  return report;
}

EvalReport evaluate_tbs(std::span<const CytoBenchItem> items, const EndpointConfig& model, const PromptSet& prompts,
                        ChatClient& client, const EvalOptions& options) {
  if (items.empty()) throw Error(ErrorCode::kInvalidArgument, "benchmark has no items");
  const auto question = replace_all(prompts.tbs_question, "{tbs_options}", render_tbs_options());
  auto replies = query_all(items.size(), model.max_in_flight, [&](std::size_t k) {
    const auto& item = items[k];
    auto image = load_image_bytes(item.tile, options.image_root);
    return client.send_chat(model, make_request(model, prompts.bench_system, question, image, item.tile.media_type))
        .text;
  });
  std::vector<TbsOutcome> outcomes;
  outcomes.reserve(items.size());
  for (std::size_t k = 0; k < items.size(); ++k) {
    outcomes.push_back({items[k].ground_truth, replies[k] ? extract_tbs_answer(*replies[k]) : std::nullopt});
  }
  auto report = score_tbs(outcomes);
  report.model_name = model.model_name;
  report.run_config_hash = eval_hash("tbs", model, prompts.bench_system, prompts.tbs_question, "");
  return report;
}

// --- rendering ----------------------------------------------------------------

namespace {

constexpr const char* kEmptyCell = "\xE2\x80\x93";  // en dash

std::size_t display_width(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string pad_left(std::string_view s, std::size_t width) {
  auto w = display_width(s);
  return std::string(w < width ? width - w : 0, ' ') + std::string(s);
}

std::string pad_right(std::string_view s, std::size_t width) {
  auto w = display_width(s);
  return std::string(s) + std::string(w < width ? width - w : 0, ' ');
}

std::string percent(const std::optional<double>& v) {
  if (!v) return kEmptyCell;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", *v);
  return buf;
}

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

// One header row and one data row, first column left-aligned.
std::string render_row_table(const std::vector<std::string>& header, const std::vector<std::string>& row) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = std::max(display_width(header[i]), display_width(row[i]));
  std::string out;
  for (const auto* line : {&header, &row}) {
    for (std::size_t i = 0; i < line->size(); ++i) {
      if (i) out += "  ";
      out += i == 0 ? pad_right((*line)[i], width[i]) : pad_left((*line)[i], width[i]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  auto groups = nlohmann::json::array();
  for (std::size_t g = 0; g < r.groups.size(); ++g) {
    groups.push_back({{"group", r.groups[g]},
                      {"correct", r.group_correct[g]},
                      {"total", r.group_total[g]},
                      {"accuracy", optional_number(r.accuracy[g])}});
  }
  return {{"bench", r.kind == BenchKind::kMorpho ? "morpho" : "tbs"},
          {"model", r.model_name},
          {"run_config_hash", r.run_config_hash},
          {"n_items", r.n_items},
          {"n_unparseable", r.n_unparseable},
          {"groups", std::move(groups)},
          {"macro_average", optional_number(r.macro_average)},
          {"confusion",
           {{"rows", r.confusion.rows}, {"columns", r.confusion.columns}, {"counts", r.confusion.counts}}}};
}

std::string render_report(const EvalReport& r, ReportFormat format) {
  if (format == ReportFormat::kJson) return to_json(r).dump(2) + "\n";

  std::vector<std::string> header{"Model"};
  std::vector<std::string> row{r.model_name.empty() ? "-" : r.model_name};
  for (std::size_t g = 0; g < r.groups.size(); ++g) {
    header.push_back(r.groups[g]);
    row.push_back(percent(r.accuracy[g]));
  }
  header.emplace_back("Avg");
  row.push_back(percent(r.macro_average));

  std::string out = render_row_table(header, row);
  out += "items: " + std::to_string(r.n_items) + "  unparseable: " + std::to_string(r.n_unparseable) + "\n\n";
  out += "confusion (rows: truth, columns: prediction)\n";

  std::size_t first = 0;
  for (const auto& name : r.confusion.rows) first = std::max(first, display_width(name));
  std::vector<std::size_t> width;
  for (std::size_t c = 0; c < r.confusion.columns.size(); ++c) {
    std::size_t w = display_width(r.confusion.columns[c]);
    for (const auto& counts : r.confusion.counts) w = std::max(w, std::to_string(counts[c]).size());
    width.push_back(w);
  }
  out += pad_right("", first);
  for (std::size_t c = 0; c < r.confusion.columns.size(); ++c) out += "  " + pad_left(r.confusion.columns[c], width[c]);
  out += '\n';
  for (std::size_t i = 0; i < r.confusion.rows.size(); ++i) {
    out += pad_right(r.confusion.rows[i], first);
    for (std::size_t c = 0; c < r.confusion.columns.size(); ++c) {
      out += "  " + pad_left(std::to_string(r.confusion.counts[i][c]), width[c]);
    }
    out += '\n';
  }
  return out;
}

// --- agreement ----------------------------------------------------------------

RaterAnnotations parse_rater_file(std::string_view text, std::string rater_id, std::string_view source) {
  RaterAnnotations r;
  r.rater_id = std::move(rater_id);
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto line = trim(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    start = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    auto where = std::string(source) + ":" + std::to_string(line_no);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kInvalidArgument, where + ": not a JSON object");
    try {
      if (j.contains("rater_id")) r.rater_id = j.at("rater_id").get<std::string>();
      auto id = j.at("item_id").get<std::string>();
      if (!r.verdicts.emplace(id, verdict_from_json(j.at("verdict"))).second) {
        throw Error(ErrorCode::kInvalidArgument, "duplicate item_id '" + id + "'");
      }
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kInvalidArgument, where + ": " + ex.what());
    } catch (const Error& err) {
      throw Error(ErrorCode::kInvalidArgument, where + ": " + err.what());
    }
  }
  return r;
}

PairCount item_pair_agreement(std::span<const Verdict> verdicts) {
  std::size_t pos = 0;
  for (auto v : verdicts) pos += v == Verdict::kPositive;
  const std::size_t n = verdicts.size(), neg = n - pos;
  return {pos * (pos - (pos > 0)) / 2 + neg * (neg - (neg > 0)) / 2, n * (n - (n > 0)) / 2};
}

AgreementReport inter_rater_agreement(std::span<const RaterAnnotations> raters,
                                      std::span<const MorphoBenchItem> items) {
  if (raters.size() < 2) {
    throw Error(ErrorCode::kInsufficientRaters,
                "agreement needs at least 2 raters, got " + std::to_string(raters.size()));
  }
  std::map<std::string, MorphDimension> dimension_of;
  for (const auto& item : items) dimension_of.emplace(item.item_id, item.dimension);
  for (const auto& r : raters) {
    for (const auto& [id, _] : r.verdicts) {
      if (!dimension_of.contains(id)) {
        throw Error(ErrorCode::kInvalidArgument, "rater '" + r.rater_id + "' annotates unknown item '" + id + "'");
      }
    }
  }

  AgreementReport report;
  report.n_raters = raters.size();
  for (const auto& [id, dim] : dimension_of) {
    std::vector<Verdict> verdicts;
    for (const auto& r : raters) {
      if (auto it = r.verdicts.find(id); it != r.verdicts.end()) verdicts.push_back(it->second);
    }
    auto pc = item_pair_agreement(verdicts);
    report.pairs[index_of(dim)].agreeing += pc.agreeing;
    report.pairs[index_of(dim)].total += pc.total;
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t d = 0; d < kDimensionCount; ++d) {
    const auto& pc = report.pairs[d];
    if (pc.total == 0) continue;
    report.percent[d] = static_cast<double>(pc.agreeing) * 100.0 / static_cast<double>(pc.total);
    sum += *report.percent[d];
    ++n;
  }
  if (n) report.average = sum / static_cast<double>(n);
  return report;
}

nlohmann::json to_json(const AgreementReport& r) {
  auto dims = nlohmann::json::array();
  for (std::size_t d = 0; d < kDimensionCount; ++d) {
    dims.push_back({{"dimension", kDimensions[d].code},
                    {"agreeing_pairs", r.pairs[d].agreeing},
                    {"total_pairs", r.pairs[d].total},
                    {"agreement", optional_number(r.percent[d])}});
  }
  return {{"n_raters", r.n_raters}, {"dimensions", std::move(dims)}, {"average", optional_number(r.average)}};
}

std::string render_agreement(const AgreementReport& r, ReportFormat format) {
  if (format == ReportFormat::kJson) return to_json(r).dump(2) + "\n";
  std::vector<std::string> header{"Raters"};
  std::vector<std::string> row{std::to_string(r.n_raters)};
  for (std::size_t d = 0; d < kDimensionCount; ++d) {
    header.emplace_back(kDimensions[d].code);
    row.push_back(percent(r.percent[d]));
  }
  header.emplace_back("Avg");
  row.push_back(percent(r.average));
  return render_row_table(header, row);
}

}  // namespace cytotext
