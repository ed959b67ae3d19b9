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
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "epistyle/autodiff.hpp"

namespace epistyle {

struct GradCheckOptions {
  double eps = 1e-5;
  // Entries checked per parameter; 0 checks all of them. Larger parameters
  // are subsampled with `seed`.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t entries_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `fn` must build its graph from the given parameters on the
/// supplied tape and return a scalar; it is called repeatedly and has to be
/// deterministic. Relative error uses max(|a|, |b|, 1e-8) as denominator.
/// Meaningful at eps = 1e-5 only in the double-precision build.
GradCheckResult grad_check(const std::function<Var(Tape&)>& fn,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

}  // namespace epistyle
