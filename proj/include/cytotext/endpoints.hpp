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

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cytotext/digest.hpp"
#include "cytotext/error.hpp"
#include "json.hpp"

namespace cytotext {

using Millis = std::chrono::milliseconds;

// One OpenAI-compatible chat-completions service.
struct EndpointConfig {
  std::string id;
  std::string base_url;     // e.g. http://127.0.0.1:8000/v1
  std::string model_name;
  std::string api_key_env;  // empty: send no Authorization header
  int max_in_flight = 4;
  std::optional<int> requests_per_minute;  // nullopt: unlimited
  Millis timeout{60'000};
  int max_retries = 3;
  Millis retry_backoff_base{500};
  Millis retry_backoff_cap{60'000};
  double temperature = 0.2;
  int max_output_tokens = 1024;
  std::optional<std::int64_t> seed = 1234;
};

// Throws Error(kConfigInvalid) naming the offending field.
void validate(const EndpointConfig& endpoint);
EndpointConfig endpoint_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EndpointConfig& endpoint);

struct ImagePart {
  std::string media_type;
  std::string data_base64;
};

struct UserTurn {
  std::vector<std::string> text_parts;
  std::vector<ImagePart> images;
};

struct ChatRequest {
  std::string system_prompt;
  std::vector<UserTurn> user_turns;
  double temperature = 0.2;
  int max_output_tokens = 1024;
  std::optional<std::int64_t> seed;
};

// A single-turn request carrying the endpoint's decoding defaults; `image` may
// be empty for text-only prompts.
ChatRequest make_request(const EndpointConfig& endpoint, std::string system_prompt,
                         std::string user_text, std::string_view image = {},
                         std::string media_type = "image/png");

struct TokenUsage {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t total_tokens = 0;
};

struct ChatResponse {
  std::string endpoint_id;
  std::string text;
  Millis latency{0};
  int attempt_count = 1;
  std::optional<TokenUsage> usage;
};

// Wire helpers for the chat-completions protocol.
nlohmann::json build_request_body(const EndpointConfig& endpoint, const ChatRequest& request);
// Extracts choices[0].message.content; nullopt if the body is not a completion.
std::optional<std::string> extract_completion_text(const std::string& body,
                                                   std::optional<TokenUsage>* usage = nullptr);

struct HttpResult {
  int status = 0;              // 0 when no HTTP response arrived
  std::string body;
  std::string transport_error;  // set when status == 0
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class Transport {
 public:
  virtual ~Transport() = default;
  // POSTs `body` to `{endpoint.base_url}{path}`. Must be safe to call concurrently.
  virtual HttpResult post(const EndpointConfig& endpoint, const std::string& path,
                          const std::string& body, const HttpHeaders& headers) = 0;
};

// cpp-httplib backed transport with a keep-alive connection pool per base URL.
std::shared_ptr<Transport> make_http_transport();

// Failure of one logical request; carried as a value by fan_out.
struct EndpointFailure {
  ErrorCode code = ErrorCode::kExhaustedRetries;
  std::string message;
  int attempts = 0;
};

class EndpointError : public Error {
 public:
  EndpointError(std::string endpoint_id, EndpointFailure failure)
      : Error(failure.code, endpoint_id + ": " + failure.message),
        endpoint_id_(std::move(endpoint_id)),
        failure_(std::move(failure)) {}

  const std::string& endpoint_id() const { return endpoint_id_; }
  const EndpointFailure& failure() const { return failure_; }

 private:
  std::string endpoint_id_;
  EndpointFailure failure_;
};

// Token bucket with reservation semantics: reserve() always takes a token and
// returns how long the caller must wait before using it. Over any window of
// length T at most capacity + rate*T reservations become usable.
class TokenBucket {
 public:
  using Clock = std::chrono::steady_clock;

  TokenBucket(double tokens_per_second, double capacity, Clock::time_point start = Clock::now());

  Clock::duration reserve(Clock::time_point now);

 private:
  std::mutex mu_;
  double rate_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
};

// Counting admission bound.
class AdmissionGate {
 public:
  explicit AdmissionGate(int limit) : limit_(limit) {}

  void acquire();
  void release();

  class Permit {
   public:
    explicit Permit(AdmissionGate& gate) : gate_(&gate) { gate_->acquire(); }
    ~Permit() {
      if (gate_) gate_->release();
    }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;

   private:
    AdmissionGate* gate_;
  };

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  int limit_;
  int in_use_ = 0;
};

struct FanOutSlot {
  std::string endpoint_id;
  std::variant<ChatResponse, EndpointFailure> result;

  bool ok() const { return std::holds_alternative<ChatResponse>(result); }
  const ChatResponse& response() const { return std::get<ChatResponse>(result); }
  const EndpointFailure& failure() const { return std::get<EndpointFailure>(result); }
};

struct ClientOptions {
  std::uint64_t jitter_seed = 0x5eed;
  // Replaced in tests so retries do not actually sleep.
  std::function<void(std::chrono::nanoseconds)> sleep;
};

// Chat client shared by all pipeline stages. Rate limits and in-flight bounds
// are tracked per endpoint id across every caller of the same client.
class ChatClient {
 public:
  explicit ChatClient(std::shared_ptr<Transport> transport = make_http_transport(),
                      ClientOptions options = {});

  // Sends one request with retries (exponential backoff, full jitter, capped).
  // Throws EndpointError with kAuthMissing, kNonRetryable or kExhaustedRetries.
  ChatResponse send_chat(const EndpointConfig& endpoint, const ChatRequest& request);

  // Issues one request per endpoint concurrently. The result has one slot per
  // endpoint in input order; failures are per-slot values.
  std::vector<FanOutSlot> fan_out(
      const std::vector<EndpointConfig>& endpoints,
      const std::function<ChatRequest(const EndpointConfig&)>& build_request);

 private:
  struct EndpointState {
    explicit EndpointState(const EndpointConfig& e);
    AdmissionGate gate;
    std::unique_ptr<TokenBucket> bucket;
  };

  EndpointState& state_for(const EndpointConfig& endpoint);
  std::chrono::nanoseconds backoff(const EndpointConfig& endpoint, int failed_attempt);
  void pause(std::chrono::nanoseconds d) const;

  std::shared_ptr<Transport> transport_;
  ClientOptions options_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<EndpointState>> states_;
  std::mutex rng_mu_;
  Rng rng_;
};

}  // namespace cytotext
