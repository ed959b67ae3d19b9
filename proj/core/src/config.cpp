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


#include "epistyle/config.hpp"

#include <charconv>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "epistyle/common.hpp"

namespace epistyle {

namespace {

const std::string& single(const std::vector<std::string>& values, const std::string& section,
                          const std::string& key) {
  if (values.size() != 1) {
    throw ValidationError("config key " + section + "." + key + " expects one value");
  }
  return values.front();
}

template <class T>
T parse_number(const std::string& text, const std::string& section, const std::string& key) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("config key " + section + "." + key + ": malformed number '" + text +
                          "'");
  }
  return value;
}

std::string quote_if_needed(const std::string& v) {
  if (!v.empty() && v.find_first_of(" \t,;#\"'=[]") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

}  // namespace

Config Config::parse(std::istream& in) {
  Config config;
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
  for (const CLI::ConfigItem& item : items) {
    // CLI11 emits "++"/"--" markers at section boundaries.
    if (item.name == "++" || item.name == "--") continue;
    std::string section;
    for (std::size_t i = 0; i < item.parents.size(); ++i) {
      if (i) section += '.';
      section += item.parents[i];
    }
    config.set(section, item.name, item.inputs);
  }
  return config;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  return parse(in);
}

void Config::set(const std::string& section, const std::string& key,
                 std::vector<std::string> values) {
  sections_[section][key] = std::move(values);
}

const std::vector<std::string>* Config::find(const std::string& section,
                                             const std::string& key) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  return k == s->second.end() ? nullptr : &k->second;
}

const std::map<std::string, std::vector<std::string>>& Config::section(
    const std::string& name) const {
  static const std::map<std::string, std::vector<std::string>> empty;
  auto s = sections_.find(name);
  return s == sections_.end() ? empty : s->second;
}

std::vector<std::string> Config::sections() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : sections_) out.push_back(name);
  return out;
}

std::string Config::get_string(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  const auto* v = find(section, key);
  return v ? single(*v, section, key) : fallback;
}

double Config::get_double(const std::string& section, const std::string& key,
                          double fallback) const {
  const auto* v = find(section, key);
  return v ? parse_number<double>(single(*v, section, key), section, key) : fallback;
}

std::size_t Config::get_size(const std::string& section, const std::string& key,
                             std::size_t fallback) const {
  const auto* v = find(section, key);
  return v ? parse_number<std::size_t>(single(*v, section, key), section, key) : fallback;
}

std::vector<std::size_t> Config::get_sizes(const std::string& section, const std::string& key,
                                           const std::vector<std::size_t>& fallback) const {
  const auto* v = find(section, key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  for (const std::string& s : *v) out.push_back(parse_number<std::size_t>(s, section, key));
  return out;
}

void Config::write(std::ostream& out) const {
  bool first = true;
  for (const auto& [name, keys] : sections_) {
    if (!name.empty()) {
      if (!first) out << '\n';
      out << '[' << name << "]\n";
    }
    first = false;
    for (const auto& [key, values] : keys) {
      out << key << " = ";
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out << ',';
        out << quote_if_needed(values[i]);
      }
      out << '\n';
    }
  }
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write(out);
}

}  // namespace epistyle
