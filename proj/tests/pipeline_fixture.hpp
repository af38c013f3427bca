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

// A three-annotator mock deployment over a directory of synthetic tiles.
// Each annotator renders its reply from a simulated case keyed by the tile
// image, so replies are deterministic and exercise the real parse path.

#include <set>
#include <string>
#include <vector>

#include "cytotext/config.hpp"
#include "cytotext/pipeline.hpp"
#include "cytotext/simulate.hpp"
#include "mock_server.hpp"
#include "test_support.hpp"

namespace cyt_test {

inline std::string tile_image(std::size_t i) {
  std::string bytes = "\x89PNG\r\n\x1a\n";
  bytes += "tile:" + std::to_string(i);
  return bytes;
}

inline std::size_t tile_index_from_image(const std::string& image) {
  auto pos = image.find("tile:");
  return pos == std::string::npos ? 0 : std::stoul(image.substr(pos + 5));
}

struct PipelineFixture {
  cytotext::testing::MockServer server;
  TempDir dir;
  std::vector<cytotext::ImageTile> tiles;
  cytotext::PipelineConfig config;
  // Tiles whose annotators all fail.
  std::set<std::size_t> broken_tiles;

  explicit PipelineFixture(std::size_t n_tiles, std::size_t shard_size = 10, bool with_expert = false) {
    const char* names[] = {"ann-a", "ann-b", "ann-c"};
    for (int a = 0; a < 3; ++a) {
      cytotext::AnnotatorProfile profile;
      profile.profile_id = names[a];
      profile.accuracy.fill(0.8);
      profile.coverage.fill(0.9);
      profile.seed = 100 + static_cast<std::uint64_t>(a);
      cytotext::testing::MockModel m;
      m.handler = [this, profile](const nlohmann::json&, const std::string& image) -> std::string {
        auto i = tile_index_from_image(image);
        if (broken_tiles.count(i)) throw std::runtime_error("scripted failure");
        auto c = cytotext::generate_case(7, i);
        return cytotext::render_annotator_text(c, profile, cytotext::PhraseBook::builtin());
      };
      server.set_model(names[a], m);
      auto e = endpoint(names[a], server.base_url(), names[a]);
      e.max_retries = 1;
      config.endpoints.push_back(e);
      config.annotator_ids.push_back(names[a]);
    }
    if (with_expert) {
      cytotext::testing::MockModel expert;
      expert.default_reply = "The chromatin is coarse and there is an irregular nuclear membrane.";
      server.set_model("expert", expert);
      config.endpoints.push_back(endpoint("expert", server.base_url(), "expert"));
      config.expert_id = "expert";
    }
    config.shard_size = shard_size;
    config.concurrency = 4;
    config.fixed_created_at = "2026-01-01T00:00:00Z";

    std::string manifest;
    for (std::size_t i = 0; i < n_tiles; ++i) {
      cytotext::ImageTile t;
      t.tile_id = "tile-" + std::to_string(i);
      t.uri = "images/" + t.tile_id + ".png";
      t.source_slide_id = "slide-" + std::to_string(i / 10);
      write_file(dir / t.uri, tile_image(i));
      tiles.push_back(t);
      manifest += cytotext::to_json(t).dump() + "\n";
    }
    write_file(dir / "manifest.jsonl", manifest);
  }

  cytotext::RunOptions options(const std::string& out) const {
    cytotext::RunOptions o;
    o.output_dir = dir / out;
    o.image_root = dir.path();
    return o;
  }
};

}  // namespace cyt_test
