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

#include <filesystem>
#include <map>
#include <span>
#include <string>

#include "epistyle/autodiff.hpp"

namespace epistyle {

// Binary layout (little-endian):
//   "EPST1" | u32 block count | blocks...
//   block: u32 name length | name bytes | u32 rank | u64 dims[rank] |
//          f32 values[prod(dims)]
void save_checkpoint(const std::filesystem::path& path,
                     std::span<const Parameter* const> params);

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path);

/// Copies stored tensors into same-named parameters. Every parameter must be
/// present with a matching shape.
void restore_parameters(const std::map<std::string, Tensor>& stored,
                        std::span<Parameter* const> params);

}  // namespace epistyle
