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

#include "cytotext/endpoints.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <future>
#include <thread>

#include "httplib.h"
#include "log.hpp"

namespace cytotext {

namespace {

ErrorCode config_error() { return ErrorCode::kConfigInvalid; }

Millis millis_field(const nlohmann::json& j, const char* key, Millis fallback) {
  if (!j.contains(key)) return fallback;
  return Millis(j.at(key).get<std::int64_t>());
}

}  // namespace

void validate(const EndpointConfig& e) {
  auto fail = [&](const std::string& what) {
    throw Error(config_error(), "endpoint '" + e.id + "': " + what);
  };
  if (e.id.empty()) throw Error(config_error(), "endpoint id must not be empty");
  if (e.base_url.empty()) fail("base_url is required");
  if (e.model_name.empty()) fail("model is required");
  if (e.max_in_flight < 1) fail("max_in_flight must be >= 1");
  if (e.requests_per_minute && *e.requests_per_minute < 1) fail("requests_per_minute must be >= 1");
  if (e.timeout.count() <= 0) fail("timeout_ms must be > 0");
  if (e.max_retries < 0) fail("max_retries must be >= 0");
  if (e.retry_backoff_base.count() < 0 || e.retry_backoff_cap.count() < 0) fail("backoff must be >= 0");
  if (e.temperature < 0.0) fail("temperature must be >= 0");
  if (e.max_output_tokens < 1) fail("max_output_tokens must be >= 1");
}

EndpointConfig endpoint_from_json(const nlohmann::json& j) {
  try {
    EndpointConfig e;
    e.id = j.at("id").get<std::string>();
    e.base_url = j.at("base_url").get<std::string>();
    e.model_name = j.at("model").get<std::string>();
    e.api_key_env = j.value("api_key_env", std::string{});
    e.max_in_flight = j.value("max_in_flight", e.max_in_flight);
    if (j.contains("requests_per_minute") && !j.at("requests_per_minute").is_null()) {
      e.requests_per_minute = j.at("requests_per_minute").get<int>();
    }
    e.timeout = millis_field(j, "timeout_ms", e.timeout);
    e.max_retries = j.value("max_retries", e.max_retries);
    e.retry_backoff_base = millis_field(j, "retry_backoff_base_ms", e.retry_backoff_base);
    e.retry_backoff_cap = millis_field(j, "retry_backoff_cap_ms", e.retry_backoff_cap);
    e.temperature = j.value("temperature", e.temperature);
    e.max_output_tokens = j.value("max_output_tokens", e.max_output_tokens);
    if (j.contains("seed")) {
      if (j.at("seed").is_null()) e.seed.reset();
      else e.seed = j.at("seed").get<std::int64_t>();
    }
    validate(e);
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(config_error(), std::string("bad endpoint entry: ") + ex.what());
  }
}

nlohmann::json to_json(const EndpointConfig& e) {
  nlohmann::json j{{"id", e.id},
                   {"base_url", e.base_url},
                   {"model", e.model_name},
                   {"api_key_env", e.api_key_env},
                   {"max_in_flight", e.max_in_flight},
                   {"timeout_ms", e.timeout.count()},
                   {"max_retries", e.max_retries},
                   {"retry_backoff_base_ms", e.retry_backoff_base.count()},
                   {"retry_backoff_cap_ms", e.retry_backoff_cap.count()},
                   {"temperature", e.temperature},
                   {"max_output_tokens", e.max_output_tokens}};
  j["requests_per_minute"] = e.requests_per_minute ? nlohmann::json(*e.requests_per_minute) : nlohmann::json();
  j["seed"] = e.seed ? nlohmann::json(*e.seed) : nlohmann::json();
  return j;
}

ChatRequest make_request(const EndpointConfig& endpoint, std::string system_prompt,
                         std::string user_text, std::string_view image, std::string media_type) {
  ChatRequest r;
  r.system_prompt = std::move(system_prompt);
  UserTurn turn;
  turn.text_parts.push_back(std::move(user_text));
  if (!image.empty()) turn.images.push_back({std::move(media_type), base64_encode(image)});
  r.user_turns.push_back(std::move(turn));
  r.temperature = endpoint.temperature;
  r.max_output_tokens = endpoint.max_output_tokens;
  r.seed = endpoint.seed;
  return r;
}

nlohmann::json build_request_body(const EndpointConfig& endpoint, const ChatRequest& request) {
  auto messages = nlohmann::json::array();
  if (!request.system_prompt.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_prompt}});
  }
  for (const auto& turn : request.user_turns) {
    auto content = nlohmann::json::array();
    for (const auto& img : turn.images) {
      content.push_back(
          {{"type", "image_url"},
           {"image_url", {{"url", "data:" + img.media_type + ";base64," + img.data_base64}}}});
    }
    for (const auto& text : turn.text_parts) content.push_back({{"type", "text"}, {"text", text}});
    messages.push_back({{"role", "user"}, {"content", std::move(content)}});
  }
  nlohmann::json body{{"model", endpoint.model_name},
                      {"messages", std::move(messages)},
                      {"temperature", request.temperature},
                      {"max_tokens", request.max_output_tokens},
                      {"stream", false}};
  if (request.seed) body["seed"] = *request.seed;
  return body;
}

std::optional<std::string> extract_completion_text(const std::string& body,
                                                   std::optional<TokenUsage>* usage) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) return std::nullopt;
  const auto& first = (*choices)[0];
  if (!first.is_object() || !first.contains("message")) return std::nullopt;
  const auto& msg = first.at("message");
  if (!msg.is_object() || !msg.contains("content")) return std::nullopt;
  const auto& content = msg.at("content");
  std::string text;
  if (content.is_string()) {
    text = content.get<std::string>();
  } else if (content.is_array()) {
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text") text += part.value("text", "");
    }
  } else {
    return std::nullopt;
  }
  if (usage) {
    usage->reset();
    if (auto u = j.find("usage"); u != j.end() && u->is_object()) {
      TokenUsage t;
      t.prompt_tokens = u->value("prompt_tokens", std::int64_t{0});
      t.completion_tokens = u->value("completion_tokens", std::int64_t{0});
      t.total_tokens = u->value("total_tokens", t.prompt_tokens + t.completion_tokens);
      *usage = t;
    }
  }
  return text;
}

// --- HTTP transport ---------------------------------------------------------

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = url.find('/', host_start);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.origin = url;
  } else {
    out.origin = url.substr(0, path_start);
    out.prefix = url.substr(path_start);
  }
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

class HttpTransport final : public Transport {
 public:
  HttpResult post(const EndpointConfig& endpoint, const std::string& path,
                  const std::string& body, const HttpHeaders& headers) override {
    auto url = split_url(endpoint.base_url);
    auto client = borrow(url.origin);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
    client->set_connection_timeout(secs.count(), usecs.count());
    client->set_read_timeout(secs.count(), usecs.count());
    client->set_write_timeout(secs.count(), usecs.count());

    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client->Post(url.prefix + path, h, body, "application/json");
    HttpResult out;
    if (!res) {
      out.transport_error = httplib::to_string(res.error());
      // Drop the connection; it may be half-open after a timeout.
      return out;
    }
    out.status = res->status;
    out.body = std::move(res->body);
    give_back(url.origin, std::move(client));
    return out;
  }

 private:
  std::unique_ptr<httplib::Client> borrow(const std::string& origin) {
    {
      std::lock_guard lock(mu_);
      auto& pool = pools_[origin];
      if (!pool.empty()) {
        auto c = std::move(pool.back());
        pool.pop_back();
        return c;
      }
    }
    auto c = std::make_unique<httplib::Client>(origin);
    c->set_keep_alive(true);
    c->set_tcp_nodelay(true);
    return c;
  }

  void give_back(const std::string& origin, std::unique_ptr<httplib::Client> c) {
    std::lock_guard lock(mu_);
    auto& pool = pools_[origin];
    if (pool.size() < 64) pool.push_back(std::move(c));
  }

  std::mutex mu_;
  std::map<std::string, std::vector<std::unique_ptr<httplib::Client>>> pools_;
};

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttpTransport>(); }

// --- limiter primitives -----------------------------------------------------

TokenBucket::TokenBucket(double tokens_per_second, double capacity, Clock::time_point start)
    : rate_(tokens_per_second), capacity_(capacity), tokens_(capacity), last_(start) {}

TokenBucket::Clock::duration TokenBucket::reserve(Clock::time_point now) {
  std::lock_guard lock(mu_);
  if (now > last_) {
    std::chrono::duration<double> dt = now - last_;
    tokens_ = std::min(capacity_, tokens_ + dt.count() * rate_);
    last_ = now;
  }
  tokens_ -= 1.0;
  if (tokens_ >= 0.0) return Clock::duration::zero();
  return std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(-tokens_ / rate_));
}

void AdmissionGate::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_use_ < limit_; });
  ++in_use_;
}

void AdmissionGate::release() {
  {
    std::lock_guard lock(mu_);
    --in_use_;
  }
  cv_.notify_one();
}

// --- client -----------------------------------------------------------------

ChatClient::EndpointState::EndpointState(const EndpointConfig& e) : gate(e.max_in_flight) {
  if (e.requests_per_minute) {
    bucket = std::make_unique<TokenBucket>(*e.requests_per_minute / 60.0,
                                           static_cast<double>(e.max_in_flight));
  }
}

ChatClient::ChatClient(std::shared_ptr<Transport> transport, ClientOptions options)
    : transport_(std::move(transport)), options_(std::move(options)), rng_(options_.jitter_seed) {}

ChatClient::EndpointState& ChatClient::state_for(const EndpointConfig& endpoint) {
  std::lock_guard lock(mu_);
  auto& slot = states_[endpoint.id];
  if (!slot) slot = std::make_unique<EndpointState>(endpoint);
  return *slot;
}

std::chrono::nanoseconds ChatClient::backoff(const EndpointConfig& endpoint, int failed_attempt) {
  using namespace std::chrono;
  double base_ms = static_cast<double>(endpoint.retry_backoff_base.count());
  double ceiling_ms = std::min(static_cast<double>(endpoint.retry_backoff_cap.count()),
                               base_ms * std::ldexp(1.0, std::min(failed_attempt, 40)));
  double u;
  {
    std::lock_guard lock(rng_mu_);
    u = uniform01(rng_);
  }
  return duration_cast<nanoseconds>(duration<double, std::milli>(u * ceiling_ms));
}

void ChatClient::pause(std::chrono::nanoseconds d) const {
  if (d <= std::chrono::nanoseconds::zero()) return;
  if (options_.sleep) options_.sleep(d);
  else std::this_thread::sleep_for(d);
}

ChatResponse ChatClient::send_chat(const EndpointConfig& endpoint, const ChatRequest& request) {
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();

  if (request.user_turns.empty()) {
    throw EndpointError(endpoint.id, {ErrorCode::kNonRetryable, "request has no user turn", 0});
  }
  HttpHeaders headers{{"Content-Type", "application/json"}};
  if (!endpoint.api_key_env.empty()) {
    const char* key = std::getenv(endpoint.api_key_env.c_str());
    if (!key) {
      throw EndpointError(endpoint.id, {ErrorCode::kAuthMissing,
                                        "environment variable " + endpoint.api_key_env + " is not set", 0});
    }
    headers.emplace_back("Authorization", std::string("Bearer ") + key);
  }

  const auto body = build_request_body(endpoint, request).dump();
  auto& state = state_for(endpoint);
  std::string last_cause;
  const int max_attempts = endpoint.max_retries + 1;

  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    if (state.bucket) pause(state.bucket->reserve(Clock::now()));
    HttpResult res;
    {
      AdmissionGate::Permit permit(state.gate);
      res = transport_->post(endpoint, "/chat/completions", body, headers);
    }

    if (res.status >= 200 && res.status < 300) {
      std::optional<TokenUsage> usage;
      auto text = extract_completion_text(res.body, &usage);
      if (!text) {
        throw EndpointError(endpoint.id, {ErrorCode::kNonRetryable, "malformed completion body", attempt});
      }
      ChatResponse out;
      out.endpoint_id = endpoint.id;
      out.text = std::move(*text);
      out.attempt_count = attempt;
      out.usage = usage;
      out.latency = std::chrono::duration_cast<Millis>(Clock::now() - started);
      return out;
    }

    const bool retryable = res.status == 0 || res.status == 429 || res.status >= 500;
    last_cause = res.status == 0 ? "transport: " + res.transport_error
                                 : "HTTP " + std::to_string(res.status);
    if (!retryable) {
      throw EndpointError(endpoint.id, {ErrorCode::kNonRetryable, last_cause, attempt});
    }
    log_message(LogLevel::kDebug, endpoint.id + ": attempt " + std::to_string(attempt) + " failed (" +
                                      last_cause + ")");
    if (attempt < max_attempts) pause(backoff(endpoint, attempt - 1));
  }
  throw EndpointError(endpoint.id, {ErrorCode::kExhaustedRetries,
                                    "gave up after " + std::to_string(max_attempts) +
                                        " attempts; last cause: " + last_cause,
                                    max_attempts});
}

std::vector<FanOutSlot> ChatClient::fan_out(
    const std::vector<EndpointConfig>& endpoints,
    const std::function<ChatRequest(const EndpointConfig&)>& build_request) {
  auto call = [&](const EndpointConfig& e) -> FanOutSlot {
    try {
      return {e.id, send_chat(e, build_request(e))};
    } catch (const EndpointError& err) {
      return {e.id, err.failure()};
    } catch (const Error& err) {
      return {e.id, EndpointFailure{err.code(), err.what(), 0}};
    }
  };
  if (endpoints.size() == 1) return {call(endpoints.front())};

  std::vector<std::future<FanOutSlot>> pending;
  pending.reserve(endpoints.size());
  for (const auto& e : endpoints) pending.push_back(std::async(std::launch::async, call, std::cref(e)));
  std::vector<FanOutSlot> out;
  out.reserve(endpoints.size());
  for (auto& f : pending) out.push_back(f.get());
  return out;
}

}  // namespace cytotext
