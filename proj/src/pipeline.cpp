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

#include "cytotext/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <map>
#include <mutex>
#include <thread>

#include "cytotext/digest.hpp"
#include "cytotext/error.hpp"
#include "cytotext/lexicon.hpp"
#include "httplib.h"
#include "log.hpp"
#include "text_util.hpp"

namespace cytotext {

namespace fs = std::filesystem;

// --- tiles ------------------------------------------------------------------

ImageTile tile_from_json(const nlohmann::json& j) {
  ImageTile t;
  t.tile_id = j.at("tile_id").get<std::string>();
  t.uri = j.at("uri").get<std::string>();
  t.source_slide_id = j.value("source_slide_id", std::string{});
  t.media_type = j.value("media_type", std::string("image/png"));
  if (j.contains("region") && !j.at("region").is_null()) {
    const auto& r = j.at("region");
    t.region = Region{r.at("x").get<std::int64_t>(), r.at("y").get<std::int64_t>(),
                      r.at("width").get<std::int64_t>(), r.at("height").get<std::int64_t>()};
  }
  return t;
}

nlohmann::json to_json(const ImageTile& t) {
  nlohmann::json j{{"tile_id", t.tile_id},
                   {"uri", t.uri},
                   {"source_slide_id", t.source_slide_id},
                   {"media_type", t.media_type}};
  if (t.region) {
    j["region"] = {{"x", t.region->x}, {"y", t.region->y}, {"width", t.region->width}, {"height", t.region->height}};
  } else {
    j["region"] = nullptr;
  }
  return j;
}

std::vector<ImageTile> parse_tile_manifest(std::string_view text, std::string_view source) {
  std::vector<ImageTile> tiles;
  std::set<std::string> ids;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    auto nl = text.find('\n', start);
    auto line = trim(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
    start = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    auto where = std::string(source) + ":" + std::to_string(line_no);
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::kManifestInvalid, where + ": not valid JSON");
    ImageTile t;
    try {
      t = tile_from_json(j);
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorCode::kManifestInvalid, where + ": " + ex.what());
    }
    if (t.tile_id.empty()) throw Error(ErrorCode::kManifestInvalid, where + ": empty tile_id");
    if (t.region && (t.region->width <= 0 || t.region->height <= 0)) {
      throw Error(ErrorCode::kManifestInvalid, where + ": region width and height must be > 0");
    }
    if (!ids.insert(t.tile_id).second) {
      throw Error(ErrorCode::kManifestInvalid, where + ": duplicate tile_id '" + t.tile_id + "'");
    }
    tiles.push_back(std::move(t));
  }
  return tiles;
}

std::vector<ImageTile> read_tile_manifest(const fs::path& path) {
  return parse_tile_manifest(read_text_file(path), path.string());
}

std::string manifest_hash(const std::vector<ImageTile>& tiles) {
  std::string canonical;
  for (const auto& t : tiles) {
    canonical += to_json(t).dump();
    canonical += '\n';
  }
  return sha256_hex(canonical);
}

std::string load_image_bytes(const ImageTile& tile, const fs::path& root) {
  if (starts_with_ci(tile.uri, "http://") || starts_with_ci(tile.uri, "https://")) {
    auto scheme_end = tile.uri.find("://") + 3;
    auto path_start = tile.uri.find('/', scheme_end);
    std::string origin = tile.uri.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : tile.uri.substr(path_start);
    httplib::Client cli(origin);
    auto res = cli.Get(path);
    if (!res) throw Error(ErrorCode::kIo, "fetch " + tile.uri + ": " + httplib::to_string(res.error()));
    if (res->status != 200) throw Error(ErrorCode::kIo, "fetch " + tile.uri + ": HTTP " + std::to_string(res->status));
    return std::move(res->body);
  }
  std::string uri = tile.uri;
  if (starts_with_ci(uri, "file://")) uri = uri.substr(7);
  fs::path p(uri);
  if (p.is_relative()) p = root / p;
  auto bytes = read_text_file(p);
  if (bytes.empty()) throw Error(ErrorCode::kIo, "image file is empty: " + p.string());
  return bytes;
}

// --- records ----------------------------------------------------------------

namespace {

nlohmann::json replies_to_json(const std::vector<RawReply>& replies, const char* text_key) {
  auto arr = nlohmann::json::array();
  for (const auto& r : replies) arr.push_back({{"endpoint_id", r.endpoint_id}, {text_key, r.text}});
  return arr;
}

std::vector<RawReply> replies_from_json(const nlohmann::json& j, const char* text_key) {
  std::vector<RawReply> out;
  for (const auto& r : j) out.push_back({r.at("endpoint_id").get<std::string>(), r.at(text_key).get<std::string>()});
  return out;
}

}  // namespace

nlohmann::json to_json(const DatasetRecord& r) {
  return {{"tile_id", r.tile_id},
          {"image_uri", r.image_uri},
          {"final", to_json(r.final_description)},
          {"stage1_raw", replies_to_json(r.stage1_raw, "text")},
          {"stage1_errors", replies_to_json(r.stage1_errors, "error")},
          {"fused", to_json(r.fused)},
          {"pipeline_config_hash", r.pipeline_config_hash},
          {"created_at", r.created_at}};
}

DatasetRecord record_from_json(const nlohmann::json& j) {
  DatasetRecord r;
  r.tile_id = j.at("tile_id").get<std::string>();
  r.image_uri = j.value("image_uri", std::string{});
  r.final_description = final_from_json(j.at("final"));
  r.stage1_raw = replies_from_json(j.at("stage1_raw"), "text");
  r.stage1_errors = replies_from_json(j.value("stage1_errors", nlohmann::json::array()), "error");
  r.fused = fused_from_json(j.at("fused"));
  r.pipeline_config_hash = j.value("pipeline_config_hash", std::string{});
  r.created_at = j.value("created_at", std::string{});
  return r;
}

std::vector<DatasetRecord> read_dataset(const fs::path& dir) {
  auto manifest_text = read_text_file(dir / kDatasetManifestName);
  auto manifest = nlohmann::json::parse(manifest_text, nullptr, false);
  if (manifest.is_discarded()) throw Error(ErrorCode::kIo, (dir / kDatasetManifestName).string() + ": not valid JSON");
  std::vector<DatasetRecord> out;
  for (const auto& shard : manifest.at("shards")) {
    auto path = dir / shard.at("file").get<std::string>();
    auto text = read_text_file(path);
    std::size_t start = 0, line_no = 0;
    while (start < text.size()) {
      auto nl = text.find('\n', start);
      auto line = text.substr(start, nl == std::string::npos ? std::string::npos : nl - start);
      start = nl == std::string::npos ? text.size() : nl + 1;
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        out.push_back(record_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& ex) {
        throw Error(ErrorCode::kIo, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
      }
    }
  }
  return out;
}

// --- shards -----------------------------------------------------------------

std::string shard_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%06zu.jsonl", index);
  return buf;
}

void atomic_write_file(const fs::path& path, std::string_view content) {
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kShardWriteFailure, path.string() + ": " + what + ": " + std::strerror(errno));
  };
  const auto tmp = fs::path(path.string() + ".tmp");
  int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) fail("open");
  const char* p = content.data();
  std::size_t left = content.size();
  while (left > 0) {
    auto n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      fail("write");
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    fail("fsync");
  }
  if (::close(fd) != 0) fail("close");
  if (::rename(tmp.c_str(), path.c_str()) != 0) fail("rename");
  auto parent = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  int dfd = ::open(parent.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (dfd >= 0) {
    ::fsync(dfd);
    ::close(dfd);
  }
}

namespace {

nlohmann::json shards_to_json(const std::vector<ShardInfo>& shards) {
  auto arr = nlohmann::json::array();
  for (const auto& s : shards) arr.push_back({{"file", s.file}, {"records", s.records}, {"sha256", s.sha256}});
  return arr;
}

std::vector<ShardInfo> shards_from_json(const nlohmann::json& j) {
  std::vector<ShardInfo> out;
  for (const auto& s : j) {
    out.push_back({s.at("file").get<std::string>(), s.at("records").get<std::size_t>(), s.at("sha256").get<std::string>()});
  }
  return out;
}

}  // namespace

ShardWriter::ShardWriter(fs::path dir, std::size_t shard_size, std::vector<ShardInfo> existing)
    : dir_(std::move(dir)), shard_size_(shard_size), shards_(std::move(existing)) {
  if (shard_size_ < 1) throw Error(ErrorCode::kInvalidArgument, "shard size must be >= 1");
}

std::optional<ShardInfo> ShardWriter::append(std::string line) {
  buffer_.push_back(std::move(line));
  if (buffer_.size() >= shard_size_) return flush();
  return std::nullopt;
}

std::optional<ShardInfo> ShardWriter::finish() {
  if (buffer_.empty()) {
    write_manifest();
    return std::nullopt;
  }
  return flush();
}

ShardInfo ShardWriter::flush() {
  std::string content;
  for (const auto& line : buffer_) {
    content += line;
    content += '\n';
  }
  ShardInfo info{shard_file_name(shards_.size()), buffer_.size(), sha256_hex(content)};
  atomic_write_file(dir_ / info.file, content);
  shards_.push_back(info);
  buffer_.clear();
  write_manifest();
  return info;
}

void ShardWriter::write_manifest() const {
  std::size_t total = 0;
  for (const auto& s : shards_) total += s.records;
  nlohmann::json j{{"shards", shards_to_json(shards_)}, {"total_records", total}};
  atomic_write_file(dir_ / kDatasetManifestName, j.dump(2) + "\n");
}

std::vector<ShardInfo> write_shards(const std::vector<nlohmann::json>& records, std::size_t shard_size,
                                    const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kShardWriteFailure, dir.string() + ": " + ec.message());
  ShardWriter writer(dir, shard_size);
  for (const auto& r : records) writer.append(r.dump());
  writer.finish();
  return writer.shards();
}

nlohmann::json to_json(const Checkpoint& c) {
  return {{"manifest_hash", c.manifest_hash},
          {"config_hash", c.config_hash},
          {"completed_tile_ids", c.completed_tile_ids},
          {"failed_tile_ids", c.failed_tile_ids},
          {"shard_index", c.shard_index},
          {"records_in_current_shard", c.records_in_current_shard},
          {"shards", shards_to_json(c.shards)}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint c;
  c.manifest_hash = j.at("manifest_hash").get<std::string>();
  c.config_hash = j.value("config_hash", std::string{});
  c.completed_tile_ids = j.at("completed_tile_ids").get<std::set<std::string>>();
  c.failed_tile_ids = j.value("failed_tile_ids", std::set<std::string>{});
  c.shard_index = j.at("shard_index").get<std::size_t>();
  c.records_in_current_shard = j.value("records_in_current_shard", std::size_t{0});
  c.shards = shards_from_json(j.value("shards", nlohmann::json::array()));
  return c;
}

std::optional<Checkpoint> read_checkpoint(const fs::path& dir) {
  auto path = dir / kCheckpointName;
  if (!fs::exists(path)) return std::nullopt;
  auto j = nlohmann::json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kIo, path.string() + ": corrupt checkpoint");
  try {
    return checkpoint_from_json(j);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kIo, path.string() + ": corrupt checkpoint: " + ex.what());
  }
}

// --- orchestration ----------------------------------------------------------

nlohmann::json to_json(const RunSummary& s) {
  auto failures = nlohmann::json::array();
  for (const auto& f : s.failures) failures.push_back({{"tile_id", f.tile_id}, {"reason", f.reason}});
  return {{"succeeded", s.succeeded},
          {"failed", s.failed},
          {"skipped", s.skipped},
          {"failures", std::move(failures)},
          {"shards", s.shard_paths},
          {"manifest_hash", s.manifest_hash},
          {"config_hash", s.config_hash},
          {"cancelled", s.cancelled}};
}

std::string utc_timestamp_now() {
  auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

TileOutcome process_tile(const ImageTile& tile, const std::string& image, const PipelineConfig& config,
                         ChatClient& client, const std::string& chash, const std::string& created_at) {
  const auto annotators = config.annotators();
  const auto user_prompt = replace_all(config.prompts.annotator_user, "{dimension_list}", render_dimension_list());
  auto slots = client.fan_out(annotators, [&](const EndpointConfig& e) {
    return make_request(e, config.prompts.annotator_system, user_prompt, image, tile.media_type);
  });

  DatasetRecord record;
  record.tile_id = tile.tile_id;
  record.image_uri = tile.uri;
  record.pipeline_config_hash = chash;
  record.created_at = created_at;

  std::vector<AnnotatorCaption> captions;
  std::vector<std::string> narratives;
  for (const auto& slot : slots) {
    if (!slot.ok()) {
      record.stage1_errors.push_back({slot.endpoint_id, std::string(error_code_name(slot.failure().code)) +
                                                            ": " + slot.failure().message});
      continue;
    }
    const auto& text = slot.response().text;
    if (trim(text).empty()) {
      record.stage1_errors.push_back({slot.endpoint_id, "EmptyCaption: annotator returned no text"});
      continue;
    }
    record.stage1_raw.push_back({slot.endpoint_id, text});
    captions.push_back({slot.endpoint_id, parse_structured_caption(text, *config.lexicon)});
    narratives.push_back(text);
  }
  if (captions.empty()) {
    std::string why = "all annotators failed";
    if (!record.stage1_errors.empty()) why += " (" + record.stage1_errors.front().text + ")";
    return TileFailure{tile.tile_id, why};
  }

  try {
    record.fused = fuse_consensus(captions, config.fusion);
    record.fused.narrative = summarize_narrative(record.fused, narratives, config.fusion.integrator, &client,
                                                 config.prompts.integrator);
    if (auto expert = config.role(config.expert_id)) {
      record.final_description = refine_expert(image, tile.media_type, record.fused, *expert, *config.lexicon,
                                               client, config.prompts.expert_system, config.prompts.expert_user);
    } else {
      record.final_description = final_from_fused(record.fused);
    }
  } catch (const Error& err) {
    return TileFailure{tile.tile_id, std::string(error_code_name(err.code())) + ": " + err.what()};
  }
  return record;
}

RunSummary run_pipeline(const std::vector<ImageTile>& manifest, const PipelineConfig& config,
                        ChatClient& client, const RunOptions& options) {
  if (manifest.empty()) throw Error(ErrorCode::kManifestInvalid, "tile manifest is empty");
  if (config.annotator_ids.empty()) throw Error(ErrorCode::kConfigInvalid, "no annotator endpoints configured");

  RunSummary summary;
  summary.manifest_hash = manifest_hash(manifest);
  summary.config_hash = config_hash(config);

  std::error_code ec;
  fs::create_directories(options.output_dir, ec);
  if (ec) throw Error(ErrorCode::kShardWriteFailure, options.output_dir.string() + ": " + ec.message());

  Checkpoint cp;
  auto existing = read_checkpoint(options.output_dir);
  if (options.resume) {
    if (!existing) {
      throw Error(ErrorCode::kManifestHashMismatch,
                  "no checkpoint to resume in " + options.output_dir.string());
    }
    if (existing->manifest_hash != summary.manifest_hash) {
      throw Error(ErrorCode::kManifestHashMismatch, "checkpoint in " + options.output_dir.string() +
                                                        " belongs to a different manifest");
    }
    if (existing->config_hash != summary.config_hash) {
      throw Error(ErrorCode::kConfigInvalid, "pipeline config changed since the checkpoint was written");
    }
    cp = *existing;
  } else if (existing) {
    if (existing->manifest_hash == summary.manifest_hash) {
      throw Error(ErrorCode::kCheckpointExists, "a checkpoint for this manifest already exists in " +
                                                    options.output_dir.string() + "; pass --resume");
    }
    throw Error(ErrorCode::kManifestHashMismatch, "output directory " + options.output_dir.string() +
                                                      " holds a checkpoint for a different manifest");
  } else {
    cp.manifest_hash = summary.manifest_hash;
    cp.config_hash = summary.config_hash;
  }

  std::vector<const ImageTile*> todo;
  std::set<std::string> ids;
  for (const auto& t : manifest) ids.insert(t.tile_id);
  for (const auto& id : cp.completed_tile_ids) {
    if (!ids.contains(id)) throw Error(ErrorCode::kManifestHashMismatch, "checkpoint lists unknown tile " + id);
  }
  for (const auto& t : manifest) {
    if (cp.completed_tile_ids.contains(t.tile_id) || cp.failed_tile_ids.contains(t.tile_id)) {
      ++summary.skipped;
    } else {
      todo.push_back(&t);
    }
  }

  const std::string created_at = config.fixed_created_at ? *config.fixed_created_at
                                 : options.clock           ? options.clock()
                                                           : utc_timestamp_now();
  const std::string chash = summary.config_hash;
  ShardWriter writer(options.output_dir, config.shard_size, cp.shards);

  std::vector<std::string> unflushed_ok, unflushed_failed;
  auto persist_checkpoint = [&] {
    cp.completed_tile_ids.insert(unflushed_ok.begin(), unflushed_ok.end());
    cp.failed_tile_ids.insert(unflushed_failed.begin(), unflushed_failed.end());
    unflushed_ok.clear();
    unflushed_failed.clear();
    cp.shards = writer.shards();
    cp.shard_index = writer.shards().size();
    cp.records_in_current_shard = writer.buffered();
    atomic_write_file(options.output_dir / kCheckpointName, to_json(cp).dump(2) + "\n");
  };

  // Workers claim tiles in manifest order and park outcomes until the writer
  // (this thread) consumes them in that same order.
  std::mutex mu;
  std::condition_variable cv;
  std::map<std::size_t, TileOutcome> done;
  std::size_t next_write = 0;
  bool stop = false;
  std::atomic<std::size_t> next_claim{0};
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.concurrency), todo.size());
  const std::size_t window = 4 * workers + 1;

  auto work = [&] {
    while (true) {
      const std::size_t k = next_claim.fetch_add(1);
      if (k >= todo.size()) return;
      {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return stop || k < next_write + window; });
        if (stop) return;
      }
      const auto& tile = *todo[k];
      TileOutcome outcome;
      try {
        auto image = load_image_bytes(tile, options.image_root);
        outcome = process_tile(tile, image, config, client, chash, created_at);
      } catch (const std::exception& ex) {
        outcome = TileFailure{tile.tile_id, ex.what()};
      }
      std::lock_guard lock(mu);
      done.emplace(k, std::move(outcome));
      cv.notify_all();
    }
  };

  std::vector<std::jthread> pool;
  struct Stopper {
    std::mutex& mu;
    std::condition_variable& cv;
    bool& stop;
    ~Stopper() {
      {
        std::lock_guard lock(mu);
        stop = true;
      }
      cv.notify_all();
    }
  } stopper{mu, cv, stop};
  for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);

  auto cancelled = [&] { return options.cancel && options.cancel->load(); };

  for (std::size_t k = 0; k < todo.size(); ++k) {
    TileOutcome outcome;
    {
      std::unique_lock lock(mu);
      while (!done.contains(k)) {
        if (cancelled()) break;
        cv.wait_for(lock, std::chrono::milliseconds(50));
      }
      if (!done.contains(k)) {
        summary.cancelled = true;
        break;
      }
      outcome = std::move(done.at(k));
      done.erase(k);
      next_write = k + 1;
    }
    cv.notify_all();

    std::optional<ShardInfo> flushed;
    if (auto* record = std::get_if<DatasetRecord>(&outcome)) {
      ++summary.succeeded;
      unflushed_ok.push_back(record->tile_id);
      flushed = writer.append(to_json(*record).dump());
    } else {
      auto& failure = std::get<TileFailure>(outcome);
      log_message(LogLevel::kWarn, "tile " + failure.tile_id + " failed: " + failure.reason);
      ++summary.failed;
      unflushed_failed.push_back(failure.tile_id);
      summary.failures.push_back(std::move(failure));
    }
    if (flushed) {
      persist_checkpoint();
      log_message(LogLevel::kInfo, "flushed " + flushed->file + " (" + std::to_string(flushed->records) + " records)");
      if (options.on_flush) options.on_flush(*flushed);
    }
    if (cancelled()) {
      summary.cancelled = true;
      break;
    }
  }

  if (!summary.cancelled) {
    auto last = writer.finish();
    persist_checkpoint();
    if (last && options.on_flush) options.on_flush(*last);
  }
  for (const auto& s : writer.shards()) summary.shard_paths.push_back((options.output_dir / s.file).string());
  return summary;
}

}  // namespace cytotext
