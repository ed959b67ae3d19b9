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

#include "epistyle/common.hpp"

#include <atomic>
#include <charconv>
#include <cstdio>
#include <mutex>

namespace epistyle {
namespace {

std::mutex sink_mutex;
std::atomic<std::size_t> warnings_emitted{0};

std::function<void(std::string_view)>& sink() {
  static std::function<void(std::string_view)> s = [](std::string_view m) {
    std::fprintf(stderr, "warning: %.*s\n", static_cast<int>(m.size()), m.data());
  };
  return s;
}

}  // namespace

void warn(std::string_view message) {
  ++warnings_emitted;
  std::lock_guard<std::mutex> lock(sink_mutex);
  if (sink()) sink()(message);
}

std::function<void(std::string_view)> set_warning_sink(
    std::function<void(std::string_view)> s) {
  std::lock_guard<std::mutex> lock(sink_mutex);
  auto previous = std::move(sink());
  sink() = std::move(s);
  return previous;
}

std::size_t warning_count() { return warnings_emitted.load(); }

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw Error("uniform_index: empty range");
  // Rejection sampling keeps the draw exactly uniform and portable.
  const std::uint64_t limit = Rng::max() - (Rng::max() % n + 1) % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x > limit);
  return static_cast<std::size_t>(x % n);
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xF];
    value >>= 4;
  }
  return out;
}

std::string format_double(double value) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::string format_double(float value) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

}  // namespace epistyle
