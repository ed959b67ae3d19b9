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


#include "stage.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include <json.hpp>

#include "epistyle/common.hpp"
#include "epistyle/tensor.hpp"

namespace epistyle::cli {

using json = nlohmann::json;

namespace {

std::string hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a64(bytes));
}

std::string option_key(const std::string& key) {
  std::string out = key;
  std::replace(out.begin(), out.end(), '_', '-');
  return "--" + out;
}

bool is_bookkeeping(const CLI::Option* opt) {
  const std::string name = opt->get_name();
  return name == "--help" || name == "--config" || name == "--skip-if-fresh";
}

}  // namespace

void add_common_options(Command& cmd, bool needs_out) {
  CLI::App* app = cmd.app;
  app->add_option("--config", cmd.common.config, "INI config; flags override its keys");
  auto* out = app->add_option("--out", cmd.common.out, "Output directory");
  if (needs_out) out->required();
  app->add_option("--seed", cmd.common.seed, "Random seed")->capture_default_str();
  app->add_flag("--skip-if-fresh", cmd.common.skip_if_fresh,
                "Do nothing when manifest.json matches this run and outputs exist");
}

void require_path(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("missing upstream artifact: " + path.string());
}

Stage::Stage(Command& cmd, std::string name)
    : cmd_(cmd), name_(std::move(name)), out_(cmd.common.out) {}

void Stage::input(const fs::path& path) {
  require_path(path);
  const std::string key = path.lexically_normal().generic_string();
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().filename() != "manifest.json") {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    std::string combined;
    for (const fs::path& f : files) {
      combined += fs::relative(f, path).generic_string() + '\t' + hash_file(f) + '\n';
    }
    inputs_[key] = hex64(fnv1a64(combined));
  } else {
    inputs_[key] = hash_file(path);
  }
}

void Stage::output(const std::string& relative) { outputs_.push_back(relative); }

std::string Stage::config_hash() const {
  std::vector<std::string> lines;
  for (const CLI::Option* opt : cmd_.app->get_options()) {
    if (is_bookkeeping(opt)) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
    }
    lines.push_back(opt->get_name() + "=" + value);
  }
  std::sort(lines.begin(), lines.end());
  std::string joined = name_ + '\n';
  for (const std::string& l : lines) joined += l + '\n';
  return hex64(fnv1a64(joined));
}

namespace {

json manifest_json(const std::string& name, const std::string& config_hash,
                   const std::map<std::string, std::string>& inputs,
                   const std::vector<std::string>& outputs, std::uint64_t seed) {
  return {{"command", name},
          {"config_hash", config_hash},
          {"inputs", inputs},
          {"outputs", outputs},
          {"seed", seed},
          {"version", {{"epistyle", kVersion}, {"real", sizeof(Real) == 4 ? "f32" : "f64"}}}};
}

}  // namespace

bool Stage::fresh() const {
  if (!cmd_.common.skip_if_fresh) return false;
  std::ifstream in(out_ / "manifest.json");
  if (!in) return false;
  json stored;
  try {
    in >> stored;
  } catch (const json::exception&) {
    return false;
  }
  if (stored != manifest_json(name_, config_hash(), inputs_, outputs_, cmd_.common.seed)) {
    return false;
  }
  for (const std::string& o : outputs_) {
    if (!fs::exists(out_ / o)) return false;
  }
  std::cerr << name_ << ": outputs in " << out_.string() << " are fresh; skipping\n";
  return true;
}

void Stage::write_manifest() const {
  fs::create_directories(out_);
  std::ofstream out(out_ / "manifest.json");
  if (!out) throw Error("cannot write " + (out_ / "manifest.json").string());
  out << manifest_json(name_, config_hash(), inputs_, outputs_, cmd_.common.seed).dump(2) << '\n';
}

void run_stage(Stage& stage, const std::function<void()>& body) {
  if (stage.fresh()) return;
  fs::create_directories(stage.out_dir());
  body();
  stage.write_manifest();
}

void apply_config(std::deque<Command>& commands, const Config& config) {
  for (Command& cmd : commands) {
    for (const std::string& section : cmd.sections) {
      for (const auto& [key, values] : config.section(section)) {
        CLI::Option* opt = cmd.app->get_option_no_throw(option_key(key));
        if (!opt || is_bookkeeping(opt)) continue;
        std::string joined;
        for (std::size_t i = 0; i < values.size(); ++i) joined += (i ? "," : "") + values[i];
        try {
          opt->default_val(joined);
        } catch (const CLI::Error& e) {
          throw ValidationError("config key [" + section + "] " + key + ": " + e.what());
        }
      }
    }
  }
}

void warn_unused_keys(const Command& cmd, const std::deque<Command>& all, const Config& config) {
  for (const std::string& section : cmd.sections) {
    // [model] is read wholesale by the model builder.
    if (section == "model") continue;
    for (const auto& [key, _] : config.section(section)) {
      const bool used = std::any_of(all.begin(), all.end(), [&](const Command& other) {
        return std::find(other.sections.begin(), other.sections.end(), section) !=
                   other.sections.end() &&
               other.app->get_option_no_throw(option_key(key)) != nullptr;
      });
      if (!used) warn("config key [" + section + "] " + key + " is not used by any command");
    }
  }
}

}  // namespace epistyle::cli
