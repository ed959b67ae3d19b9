// Copyright 2026 The epistyle Authors.
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


#include <cstring>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "epistyle/common.hpp"
#include "stage.hpp"

namespace {

/// The --config value, found before parsing so its keys can become option
/// defaults that explicit flags still override.
std::optional<std::string> find_config_arg(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
    if (std::strncmp(argv[i], "--config=", 9) == 0) return std::string(argv[i] + 9);
  }
  return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace epistyle;
  using namespace epistyle::cli;
  CLI::App app{"Episode embeddings for forum authorship attribution", "epistyle"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::deque<Command> commands;
  try {
    register_corpus_commands(app, commands);
    register_graph_commands(app, commands);
    register_model_commands(app, commands);
    register_eval_commands(app, commands);
    for (Command& cmd : commands) cmd.sections.insert(cmd.sections.begin(), "");

    Config config;
    if (auto path = find_config_arg(argc, argv)) {
      config = Config::load(*path);
      apply_config(commands, config);
    }
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }
    for (Command& cmd : commands) {
      if (!cmd.app->parsed()) continue;
      warn_unused_keys(cmd, commands, config);
      cmd.run(cmd);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
