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


// Standalone mock chat-completions server for manual runs and demos.
//
//   cytotext-mock-server --script mock.json [--port-file port.txt]
//
// Prints the base URL and serves until interrupted.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "mock_server.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
extern "C" void on_signal(int) { g_stop = 1; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mock OpenAI-compatible chat-completions server"};
  std::string script_path, port_file;
  app.add_option("--script", script_path, "Behaviour script (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--port-file", port_file, "Write the bound port to this file");
  CLI11_PARSE(app, argc, argv);

  std::ifstream in(script_path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto script = nlohmann::json::parse(ss.str(), nullptr, false);
  if (script.is_discarded()) {
    std::cerr << "mock server: script is not valid JSON\n";
    return 2;
  }
  auto dir = std::filesystem::path(script_path).parent_path().string();
  cytotext::testing::MockServer server;
  for (auto& [name, model] : cytotext::testing::models_from_script(script, dir.empty() ? "." : dir)) {
    server.set_model(name, std::move(model));
  }
  if (!port_file.empty()) std::ofstream(port_file) << server.port() << "\n";
  std::cout << server.base_url() << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  return 0;
}
