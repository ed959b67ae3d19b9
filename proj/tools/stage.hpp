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


#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "epistyle/config.hpp"

namespace epistyle::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

/// Options every subcommand carries.
struct CommonOptions {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool skip_if_fresh = false;
};

/// One registered subcommand: the config sections it reads and its body.
struct Command {
  CLI::App* app = nullptr;
  std::vector<std::string> sections;
  CommonOptions common;
  std::function<void(Command&)> run;
};

/// Adds --config, --out, --seed and --skip-if-fresh.
void add_common_options(Command& cmd, bool needs_out = true);

/// Throws ValidationError naming `path` when it does not exist.
void require_path(const fs::path& path);

/// Declared inputs and outputs of one stage run. Writes manifest.json into
/// the output directory and answers --skip-if-fresh.
class Stage {
 public:
  Stage(Command& cmd, std::string name);

  /// Hashes a file, or every regular file below a directory except
  /// manifest.json. Missing paths fail validation.
  void input(const fs::path& path);
  void output(const std::string& relative);
  const fs::path& out_dir() const { return out_; }
  fs::path out(const std::string& relative) const { return out_ / relative; }

  /// True (after printing a note) when --skip-if-fresh is set and the
  /// stored manifest matches this run and every output exists.
  bool fresh() const;
  void write_manifest() const;

  std::string config_hash() const;

 private:
  Command& cmd_;
  std::string name_;
  fs::path out_;
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
};

/// Runs `body` unless the stage is fresh, then records the manifest.
void run_stage(Stage& stage, const std::function<void()>& body);

/// Applies config keys as option defaults, so explicit flags win. Keys map
/// to options by name with '_' read as '-'.
void apply_config(std::deque<Command>& commands, const Config& config);

/// Warns about keys in the command's sections that no option consumes.
void warn_unused_keys(const Command& cmd, const std::deque<Command>& all, const Config& config);

// Subcommand registration, one group per translation unit.
void register_corpus_commands(CLI::App& app, std::deque<Command>& commands);
void register_graph_commands(CLI::App& app, std::deque<Command>& commands);
void register_model_commands(CLI::App& app, std::deque<Command>& commands);
void register_eval_commands(CLI::App& app, std::deque<Command>& commands);

}  // namespace epistyle::cli
