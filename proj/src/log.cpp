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

#include "log.hpp"

#include <mutex>

#include "cytotext/error.hpp"

namespace cytotext {

namespace {

std::mutex& sink_mutex() {
  static std::mutex mu;
  return mu;
}

LogSink& sink() {
  static LogSink s;
  return s;
}

LogLevel& threshold() {
  static LogLevel t = LogLevel::kInfo;
  return t;
}

}  // namespace

void set_log_sink(LogSink s, LogLevel level) {
  std::lock_guard lock(sink_mutex());
  sink() = std::move(s);
  threshold() = level;
}

void log_message(LogLevel level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink() && level >= threshold()) sink()(level, message);
}

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kEmptyCaption: return "EmptyCaption";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kLexiconInvalid: return "LexiconInvalid";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kTemplateInvalid: return "TemplateInvalid";
    case ErrorCode::kManifestInvalid: return "ManifestInvalid";
    case ErrorCode::kManifestHashMismatch: return "ManifestHashMismatch";
    case ErrorCode::kCheckpointExists: return "CheckpointExists";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kShardWriteFailure: return "ShardWriteFailure";
    case ErrorCode::kAuthMissing: return "AuthMissing";
    case ErrorCode::kNonRetryable: return "NonRetryable";
    case ErrorCode::kExhaustedRetries: return "ExhaustedRetries";
    case ErrorCode::kInsufficientRaters: return "InsufficientRaters";
    case ErrorCode::kAllStreamsEmpty: return "AllStreamsEmpty";
    case ErrorCode::kCancelled: return "Cancelled";
    case ErrorCode::kInternal: return "Internal";
  }
  return "Unknown";
}

}  // namespace cytotext
