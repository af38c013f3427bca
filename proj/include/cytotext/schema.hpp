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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace cytotext {

// The nine binary cell observations scored by the morphology benchmark. The
// declaration order is the canonical column order used everywhere (reports,
// template narratives, serialization).
enum class MorphDimension : std::size_t {
  kNuclearEnlargement = 0,
  kNuclearAtypia,
  kNuclearHyperchromasia,
  kKoilocyte,
  kChromatinTexture,
  kNucleolus,
  kNuclearCount,
  kNuclearToCytoplasmicRatio,
  kNuclearMembrane,
};

inline constexpr std::size_t kDimensionCount = 9;

struct DimensionInfo {
  MorphDimension dimension;
  std::string_view code;
  std::string_view display_name;
  std::string_view positive_label;
  std::string_view negative_label;
};

inline constexpr std::array<DimensionInfo, kDimensionCount> kDimensions{{
    {MorphDimension::kNuclearEnlargement, "NE", "Nuclear Enlargement",
     "enlarged", "not enlarged"},
    {MorphDimension::kNuclearAtypia, "NA", "Nuclear Atypia", "atypical",
     "no atypia"},
    {MorphDimension::kNuclearHyperchromasia, "NH", "Nuclear Hyperchromasia",
     "hyperchromatic", "normochromatic"},
    {MorphDimension::kKoilocyte, "Koilocyte", "Koilocyte", "present", "absent"},
    {MorphDimension::kChromatinTexture, "CT", "Chromatin Texture", "coarse",
     "fine"},
    {MorphDimension::kNucleolus, "Nucleolus", "Nucleolus", "present", "absent"},
    {MorphDimension::kNuclearCount, "NC", "Nuclear Count", "multinucleated",
     "mononucleated"},
    {MorphDimension::kNuclearToCytoplasmicRatio, "NCR",
     "Nuclear-to-Cytoplasmic Ratio", "increased", "normal"},
    {MorphDimension::kNuclearMembrane, "NM", "Nuclear Membrane", "irregular",
     "smooth"},
}};

constexpr std::array<MorphDimension, kDimensionCount> all_dimensions() {
  std::array<MorphDimension, kDimensionCount> out{};
  for (std::size_t i = 0; i < kDimensionCount; ++i) out[i] = kDimensions[i].dimension;
  return out;
}

constexpr const DimensionInfo& info(MorphDimension d) {
  return kDimensions[static_cast<std::size_t>(d)];
}

constexpr std::size_t index_of(MorphDimension d) { return static_cast<std::size_t>(d); }

// Accepts the short code ("NE", "Koilocyte", ...) case-insensitively.
std::optional<MorphDimension> dimension_from_code(std::string_view code);

// TBS diagnostic categories in ascending-severity column order.
enum class TbsCategory : std::size_t { kNilm = 0, kAscUs, kLsil, kAscH, kHsil, kAgc };

inline constexpr std::size_t kTbsCount = 6;

struct TbsInfo {
  TbsCategory category;
  std::string_view code;
  std::string_view display_name;
};

inline constexpr std::array<TbsInfo, kTbsCount> kTbsCategories{{
    {TbsCategory::kNilm, "NILM", "Negative for intraepithelial lesion or malignancy"},
    {TbsCategory::kAscUs, "ASC-US", "Atypical squamous cells of undetermined significance"},
    {TbsCategory::kLsil, "LSIL", "Low-grade squamous intraepithelial lesion"},
    {TbsCategory::kAscH, "ASC-H", "Atypical squamous cells, cannot exclude HSIL"},
    {TbsCategory::kHsil, "HSIL", "High-grade squamous intraepithelial lesion"},
    {TbsCategory::kAgc, "AGC", "Atypical glandular cells"},
}};

constexpr const TbsInfo& info(TbsCategory c) {
  return kTbsCategories[static_cast<std::size_t>(c)];
}

constexpr std::size_t index_of(TbsCategory c) { return static_cast<std::size_t>(c); }

std::optional<TbsCategory> tbs_from_code(std::string_view code);

enum class Verdict { kPositive, kNegative };

constexpr Verdict flip(Verdict v) {
  return v == Verdict::kPositive ? Verdict::kNegative : Verdict::kPositive;
}

std::string_view verdict_name(Verdict v);
std::optional<Verdict> verdict_from_name(std::string_view name);

// Polarity label of `v` for dimension `d`, e.g. (NE, Positive) -> "enlarged".
constexpr std::string_view polarity_label(MorphDimension d, Verdict v) {
  return v == Verdict::kPositive ? info(d).positive_label : info(d).negative_label;
}

struct DimensionAssertion {
  MorphDimension dimension{};
  Verdict verdict{Verdict::kPositive};
  double confidence = 1.0;
  std::string evidence;

  friend bool operator==(const DimensionAssertion&, const DimensionAssertion&) = default;
};

// A partial set of per-dimension assertions plus free text. A missing key means
// the source did not address that dimension.
struct StructuredCaption {
  std::map<MorphDimension, DimensionAssertion> assertions;
  std::string narrative;

  friend bool operator==(const StructuredCaption&, const StructuredCaption&) = default;
};

struct SchemaViolation {
  std::optional<MorphDimension> dimension;
  std::string message;
};

// Returns every invariant violation; an empty list means the caption is valid.
std::vector<SchemaViolation> validate_schema(const StructuredCaption& caption);

// JSON forms. Assertions serialize as an array ordered by dimension.
nlohmann::json to_json(const DimensionAssertion& a);
DimensionAssertion assertion_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StructuredCaption& c);
StructuredCaption caption_from_json(const nlohmann::json& j);

nlohmann::json assertions_to_json(const std::map<MorphDimension, DimensionAssertion>& m);
std::map<MorphDimension, DimensionAssertion> assertions_from_json(const nlohmann::json& j);

MorphDimension dimension_from_json(const nlohmann::json& j);
Verdict verdict_from_json(const nlohmann::json& j);

}  // namespace cytotext
