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

#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

// Minimal RFC 4180 field handling for the label and split files.
namespace epistyle::csv {

std::vector<std::string> split(std::string_view line, char sep = ',');
std::string quote(std::string_view field, char sep = ',');
std::string join(std::initializer_list<std::string_view> fields, char sep = ',');

}  // namespace epistyle::csv
