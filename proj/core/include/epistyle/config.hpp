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

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace epistyle {

/// INI-style key-value config, flattened. Keys before any section header
/// live in section "".
class Config {
 public:
  static Config parse(std::istream& in);
  /// Throws ValidationError naming the path when it cannot be read.
  static Config load(const std::filesystem::path& path);

  void set(const std::string& section, const std::string& key, std::vector<std::string> values);
  const std::vector<std::string>* find(const std::string& section, const std::string& key) const;
  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }
  const std::map<std::string, std::vector<std::string>>& section(const std::string& name) const;
  std::vector<std::string> sections() const;

  // Typed getters return the fallback when the key is absent and throw
  // ValidationError on malformed values.
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& section, const std::string& key,
                       std::size_t fallback) const;
  std::vector<std::size_t> get_sizes(const std::string& section, const std::string& key,
                                     const std::vector<std::size_t>& fallback) const;

  /// Sections and keys in sorted order; list values comma-joined.
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::map<std::string, std::vector<std::string>>> sections_;
};

}  // namespace epistyle
