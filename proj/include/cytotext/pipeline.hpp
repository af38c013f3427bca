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

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "cytotext/config.hpp"
#include "cytotext/endpoints.hpp"
#include "cytotext/fusion.hpp"
#include "cytotext/refine.hpp"

namespace cytotext {

struct Region {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
};

struct ImageTile {
  std::string tile_id;
  std::string uri;  // file path (relative to the manifest) or http(s) URL
  std::string source_slide_id;
  std::optional<Region> region;
  std::string media_type = "image/png";
};

ImageTile tile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ImageTile& t);

// Line-delimited JSON, one ImageTile per line. Throws Error(kManifestInvalid)
// on duplicate ids, bad regions or malformed lines.
std::vector<ImageTile> parse_tile_manifest(std::string_view text, std::string_view source = "<manifest>");
std::vector<ImageTile> read_tile_manifest(const std::filesystem::path& path);

// SHA-256 over the canonical serialization of every tile, in order.
std::string manifest_hash(const std::vector<ImageTile>& tiles);

// Reads the bytes behind `tile.uri`; relative paths resolve against `root`.
std::string load_image_bytes(const ImageTile& tile, const std::filesystem::path& root);

struct RawReply {
  std::string endpoint_id;
  std::string text;
};

struct DatasetRecord {
  std::string tile_id;
  std::string image_uri;
  FinalDescription final_description;
  std::vector<RawReply> stage1_raw;
  std::vector<RawReply> stage1_errors;  // text holds the failure message
  FusedDescription fused;
  std::string pipeline_config_hash;
  std::string created_at;
};

nlohmann::json to_json(const DatasetRecord& r);
DatasetRecord record_from_json(const nlohmann::json& j);

// Reads every record of a dataset directory, in shard order.
std::vector<DatasetRecord> read_dataset(const std::filesystem::path& dir);

// --- shard storage ----------------------------------------------------------

struct ShardInfo {
  std::string file;  // name relative to the output directory
  std::size_t records = 0;
  std::string sha256;
};

inline constexpr const char* kDatasetManifestName = "dataset_manifest.json";
inline constexpr const char* kCheckpointName = "checkpoint.json";

std::string shard_file_name(std::size_t index);  // shard-000042.jsonl

// Writes `content` to a temporary sibling, fsyncs and renames over `path`.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

// Line-delimited shard writer. Every flush is atomic and rewrites the dataset
// manifest (shard names, record counts, content hashes).
class ShardWriter {
 public:
  ShardWriter(std::filesystem::path dir, std::size_t shard_size, std::vector<ShardInfo> existing = {});

  // Buffers one serialized record; flushes and returns the new shard once the
  // buffer holds shard_size records.
  std::optional<ShardInfo> append(std::string line);
  // Flushes a partial shard, if any.
  std::optional<ShardInfo> finish();

  const std::vector<ShardInfo>& shards() const { return shards_; }
  std::size_t buffered() const { return buffer_.size(); }

 private:
  ShardInfo flush();
  void write_manifest() const;

  std::filesystem::path dir_;
  std::size_t shard_size_;
  std::vector<ShardInfo> shards_;
  std::vector<std::string> buffer_;
};

// The shard_writer operation over an in-memory record list. Zero records still
// writes a manifest listing zero shards.
std::vector<ShardInfo> write_shards(const std::vector<nlohmann::json>& records, std::size_t shard_size,
                                    const std::filesystem::path& dir);

struct Checkpoint {
  std::string manifest_hash;
  std::string config_hash;
  std::set<std::string> completed_tile_ids;
  std::set<std::string> failed_tile_ids;
  std::size_t shard_index = 0;  // index of the next shard to write
  std::size_t records_in_current_shard = 0;
  std::vector<ShardInfo> shards;
};

nlohmann::json to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
std::optional<Checkpoint> read_checkpoint(const std::filesystem::path& dir);

// --- orchestration ----------------------------------------------------------

struct TileFailure {
  std::string tile_id;
  std::string reason;
};

using TileOutcome = std::variant<DatasetRecord, TileFailure>;

struct RunOptions {
  std::filesystem::path output_dir;
  std::filesystem::path image_root = ".";
  bool resume = false;
  const std::atomic<bool>* cancel = nullptr;
  // Called after each shard flush and checkpoint update.
  std::function<void(const ShardInfo&)> on_flush;
  // created_at source when the config does not pin one.
  std::function<std::string()> clock;
};

struct RunSummary {
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;
  std::vector<TileFailure> failures;
  std::vector<std::string> shard_paths;
  std::string manifest_hash;
  std::string config_hash;
  bool cancelled = false;
};

nlohmann::json to_json(const RunSummary& s);

std::string utc_timestamp_now();

// Annotators -> parse -> integrator -> expert for one tile. A tile whose annotators
// all fail (or return unusable text) becomes a TileFailure.
TileOutcome process_tile(const ImageTile& tile, const std::string& image, const PipelineConfig& config,
                         ChatClient& client, const std::string& config_hash, const std::string& created_at);

// Runs the whole manifest with up to config.concurrency tiles in flight.
// Records are written in manifest order; the checkpoint is rewritten after
// every shard flush. Throws Error with kManifestHashMismatch,
// kCheckpointExists, kConfigInvalid or kShardWriteFailure.
RunSummary run_pipeline(const std::vector<ImageTile>& manifest, const PipelineConfig& config,
                        ChatClient& client, const RunOptions& options);

}  // namespace cytotext
