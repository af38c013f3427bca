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


#include "mock_server.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "httplib.h"

namespace cytotext::testing {

namespace {

std::string decode_base64(const std::string& text) {
  if (text.empty() || text.size() % 4 != 0) return {};
  std::string out(text.size() / 4 * 3, '\0');
  int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) return {};
  std::size_t pad = 0;
  if (text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace

std::string request_image(const nlohmann::json& request) {
  for (const auto& m : request.value("messages", nlohmann::json::array())) {
    if (!m.contains("content") || !m.at("content").is_array()) continue;
    for (const auto& part : m.at("content")) {
      if (part.value("type", "") != "image_url") continue;
      auto url = part.at("image_url").at("url").get<std::string>();
      auto comma = url.find(',');
      if (comma == std::string::npos) continue;
      return decode_base64(url.substr(comma + 1));
    }
  }
  return {};
}

std::string request_text(const nlohmann::json& request) {
  std::string out;
  for (const auto& m : request.value("messages", nlohmann::json::array())) {
    if (m.value("role", "") != "user") continue;
    const auto& c = m.at("content");
    if (c.is_string()) {
      out += c.get<std::string>();
      continue;
    }
    for (const auto& part : c) {
      if (part.value("type", "") == "text") out += part.value("text", "");
    }
  }
  return out;
}

std::map<std::string, MockModel> models_from_script(const nlohmann::json& script, const std::string& base_dir) {
  std::map<std::string, MockModel> out;
  for (const auto& [name, spec] : script.at("models").items()) {
    MockModel m;
    m.default_reply = spec.value("default_reply", m.default_reply);
    m.status_script = spec.value("status_script", std::vector<int>{});
    m.always_status = spec.value("always_status", 0);
    m.echo_prompt = spec.value("echo_prompt", false);
    m.latency_ms = spec.value("latency_ms", 0);
    if (spec.contains("require_bearer")) m.require_bearer = spec.at("require_bearer").get<std::string>();
    const auto replies = spec.value("replies_by_image", nlohmann::json::object());
    for (const auto& [file, reply] : replies.items()) {
      std::ifstream in(base_dir + "/" + file, std::ios::binary);
      if (!in) throw std::runtime_error("mock script: cannot read image " + file);
      std::ostringstream ss;
      ss << in.rdbuf();
      m.replies_by_image[ss.str()] = reply.get<std::string>();
    }
    out[name] = std::move(m);
  }
  return out;
}

struct MockServer::Impl {
  httplib::Server server;
  std::thread thread;
  mutable std::mutex mu;
  std::map<std::string, MockModel> models;
  std::map<std::string, std::size_t> calls;
  std::map<std::string, int> in_flight;
  std::map<std::string, int> peak;
  std::map<std::string, std::vector<nlohmann::json>> requests;

  void handle(const httplib::Request& req, httplib::Response& res) {
    auto body = nlohmann::json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.contains("model")) {
      res.status = 400;
      res.set_content(R"({"error":"bad request"})", "application/json");
      return;
    }
    const auto model = body.at("model").get<std::string>();
    MockModel behaviour;
    std::size_t call_index = 0;
    {
      std::lock_guard lock(mu);
      auto it = models.find(model);
      if (it == models.end()) {
        res.status = 404;
        res.set_content(R"({"error":"unknown model"})", "application/json");
        return;
      }
      behaviour = it->second;
      call_index = calls[model]++;
      requests[model].push_back(body);
      peak[model] = std::max(peak[model], ++in_flight[model]);
    }
    struct Leave {
      Impl* self;
      std::string model;
      ~Leave() {
        std::lock_guard lock(self->mu);
        --self->in_flight[model];
      }
    } leave{this, model};

    if (behaviour.latency_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(behaviour.latency_ms));
    if (behaviour.require_bearer && req.get_header_value("Authorization") != "Bearer " + *behaviour.require_bearer) {
      res.status = 401;
      res.set_content(R"({"error":"unauthorized"})", "application/json");
      return;
    }
    int status = behaviour.always_status;
    if (!status && call_index < behaviour.status_script.size()) status = behaviour.status_script[call_index];
    if (status && status != 200) {
      res.status = status;
      res.set_content(R"({"error":"scripted failure"})", "application/json");
      return;
    }
    if (!behaviour.malformed_body.empty()) {
      res.set_content(behaviour.malformed_body, "application/json");
      return;
    }
    std::string reply = behaviour.default_reply;
    const auto image = request_image(body);
    if (behaviour.handler) {
      try {
        reply = behaviour.handler(body, image);
      } catch (const std::exception&) {
        res.status = 500;
        res.set_content(R"({"error":"handler failure"})", "application/json");
        return;
      }
    } else if (behaviour.echo_prompt) {
      reply = request_text(body);
    } else if (auto it = behaviour.replies_by_image.find(image); it != behaviour.replies_by_image.end()) {
      reply = it->second;
    }
    nlohmann::json out{{"id", "mock-" + std::to_string(call_index)},
                       {"object", "chat.completion"},
                       {"model", model},
                       {"choices", {{{"index", 0},
                                     {"message", {{"role", "assistant"}, {"content", reply}}},
                                     {"finish_reason", "stop"}}}},
                       {"usage", {{"prompt_tokens", 10}, {"completion_tokens", 5}, {"total_tokens", 15}}}};
    res.set_content(out.dump(), "application/json");
  }
};

MockServer::MockServer() : impl_(std::make_unique<Impl>()) {
  // Keep-alive connections each hold a worker, so size the pool for many
  // pooled client connections.
  impl_->server.new_task_queue = [] { return new httplib::ThreadPool(128); };
  impl_->server.set_keep_alive_timeout(2);
  impl_->server.set_tcp_nodelay(true);
  impl_->server.Post("/v1/chat/completions",
                     [this](const httplib::Request& req, httplib::Response& res) { impl_->handle(req, res); });
  impl_->server.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(stats().dump(), "application/json");
  });
  port_ = impl_->server.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("mock server: cannot bind");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockServer::~MockServer() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

void MockServer::set_model(const std::string& model, MockModel behaviour) {
  std::lock_guard lock(impl_->mu);
  impl_->models[model] = std::move(behaviour);
}

std::string MockServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

std::size_t MockServer::calls(const std::string& model) const {
  std::lock_guard lock(impl_->mu);
  auto it = impl_->calls.find(model);
  return it == impl_->calls.end() ? 0 : it->second;
}

std::size_t MockServer::total_calls() const {
  std::lock_guard lock(impl_->mu);
  std::size_t n = 0;
  for (const auto& [_, c] : impl_->calls) n += c;
  return n;
}

int MockServer::max_concurrency(const std::string& model) const {
  std::lock_guard lock(impl_->mu);
  auto it = impl_->peak.find(model);
  return it == impl_->peak.end() ? 0 : it->second;
}

std::vector<nlohmann::json> MockServer::requests(const std::string& model) const {
  std::lock_guard lock(impl_->mu);
  auto it = impl_->requests.find(model);
  return it == impl_->requests.end() ? std::vector<nlohmann::json>{} : it->second;
}

nlohmann::json MockServer::stats() const {
  std::lock_guard lock(impl_->mu);
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [model, c] : impl_->calls) j[model] = {{"calls", c}, {"max_concurrency", impl_->peak[model]}};
  return j;
}

void MockServer::reset_counters() {
  std::lock_guard lock(impl_->mu);
  impl_->calls.clear();
  impl_->peak.clear();
  impl_->requests.clear();
}

}  // namespace cytotext::testing
