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

#include "cytotext/schema.hpp"

#include <cmath>

#include "cytotext/error.hpp"
#include "text_util.hpp"

namespace cytotext {

std::optional<MorphDimension> dimension_from_code(std::string_view code) {
  for (const auto& d : kDimensions) {
    if (iequals(d.code, code)) return d.dimension;
  }
  return std::nullopt;
}

std::optional<TbsCategory> tbs_from_code(std::string_view code) {
  for (const auto& c : kTbsCategories) {
    if (iequals(c.code, code)) return c.category;
  }
  return std::nullopt;
}

std::string_view verdict_name(Verdict v) {
  return v == Verdict::kPositive ? "positive" : "negative";
}

std::optional<Verdict> verdict_from_name(std::string_view name) {
  if (iequals(name, "positive") || name == "+") return Verdict::kPositive;
  if (iequals(name, "negative") || name == "-") return Verdict::kNegative;
  return std::nullopt;
}

std::vector<SchemaViolation> validate_schema(const StructuredCaption& caption) {
  std::vector<SchemaViolation> out;
  for (const auto& [key, a] : caption.assertions) {
    if (a.dimension != key) {
      out.push_back({key, "assertion for " + std::string(info(a.dimension).code) +
                              " stored under key " + std::string(info(key).code)});
    }
    if (!(a.confidence >= 0.0 && a.confidence <= 1.0)) {
      out.push_back({key, "confidence of " + std::string(info(key).code) +
                              " outside [0,1]: " + std::to_string(a.confidence)});
    }
  }
  return out;
}

MorphDimension dimension_from_json(const nlohmann::json& j) {
  if (!j.is_string()) throw Error(ErrorCode::kInvalidArgument, "dimension must be a string code");
  auto d = dimension_from_code(j.get<std::string>());
  if (!d) throw Error(ErrorCode::kInvalidArgument, "unknown dimension code '" + j.get<std::string>() + "'");
  return *d;
}

Verdict verdict_from_json(const nlohmann::json& j) {
  if (j.is_boolean()) return j.get<bool>() ? Verdict::kPositive : Verdict::kNegative;
  if (!j.is_string()) throw Error(ErrorCode::kInvalidArgument, "verdict must be a string");
  auto v = verdict_from_name(j.get<std::string>());
  if (!v) throw Error(ErrorCode::kInvalidArgument, "unknown verdict '" + j.get<std::string>() + "'");
  return *v;
}

nlohmann::json to_json(const DimensionAssertion& a) {
  return {{"dimension", info(a.dimension).code},
          {"verdict", verdict_name(a.verdict)},
          {"confidence", a.confidence},
          {"evidence", a.evidence}};
}

DimensionAssertion assertion_from_json(const nlohmann::json& j) {
  DimensionAssertion a;
  a.dimension = dimension_from_json(j.at("dimension"));
  a.verdict = verdict_from_json(j.at("verdict"));
  a.confidence = j.value("confidence", 1.0);
  a.evidence = j.value("evidence", std::string{});
  return a;
}

nlohmann::json assertions_to_json(const std::map<MorphDimension, DimensionAssertion>& m) {
  auto arr = nlohmann::json::array();
  for (const auto& [_, a] : m) arr.push_back(to_json(a));
  return arr;
}

std::map<MorphDimension, DimensionAssertion> assertions_from_json(const nlohmann::json& j) {
  std::map<MorphDimension, DimensionAssertion> out;
  for (const auto& item : j) {
    auto a = assertion_from_json(item);
    auto code = std::string(info(a.dimension).code);
    if (!out.emplace(a.dimension, std::move(a)).second) {
      throw Error(ErrorCode::kInvalidArgument, "duplicate assertion for dimension " + code);
    }
  }
  return out;
}

nlohmann::json to_json(const StructuredCaption& c) {
  return {{"assertions", assertions_to_json(c.assertions)}, {"narrative", c.narrative}};
}

StructuredCaption caption_from_json(const nlohmann::json& j) {
  StructuredCaption c;
  c.assertions = assertions_from_json(j.at("assertions"));
  c.narrative = j.value("narrative", std::string{});
  return c;
}

}  // namespace cytotext
