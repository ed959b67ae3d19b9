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
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace epistyle {

// Storage type of every tensor. The double build exists so that finite
// difference checks are meaningful; production code runs in float.
#ifdef EPISTYLE_DOUBLE_PRECISION
using Real = double;
#else
using Real = float;
#endif

/// Runtime failure (I/O, numerical breakdown). CLI exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input or configuration. CLI exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

/// Routes a warning to the installed sink (stderr by default).
void warn(std::string_view message);

/// Replaces the warning sink; returns the previous one.
std::function<void(std::string_view)> set_warning_sink(
    std::function<void(std::string_view)> sink);

/// Number of warnings emitted since process start.
std::size_t warning_count();

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Uniform integer in [0, n). n must be positive.
std::size_t uniform_index(Rng& rng, std::size_t n);

/// Uniform double in [0, 1).
double uniform01(Rng& rng);

/// 64-bit FNV-1a, stable across platforms.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
std::string format_double(float value);

}  // namespace epistyle
