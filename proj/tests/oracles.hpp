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


// Independent reference implementations checked against the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace epistyle::oracle {

/// 1-based rank of the first same-owner entry for `query` after sorting all
/// other entries by cosine (descending, ties by index). Cosines are dot
/// products of unit rows in double precision. 0 when the owner has no
/// other entry.
inline std::size_t first_hit_rank(const std::vector<std::vector<double>>& rows,
                                  const std::vector<std::string>& owners, std::size_t query) {
  auto unit = [](std::vector<double> v) {
    double n = 0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  };
  std::vector<std::vector<double>> u;
  for (const auto& r : rows) u.push_back(unit(r));
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    if (j == query) continue;
    double s = 0;
    for (std::size_t k = 0; k < u[j].size(); ++k) s += u[query][k] * u[j][k];
    scored.emplace_back(-s, j);
  }
  std::sort(scored.begin(), scored.end());
  for (std::size_t r = 0; r < scored.size(); ++r) {
    if (owners[scored[r].second] == owners[query]) return r + 1;
  }
  return 0;
}

/// Two-sided signed-rank p-value by listing all 2^n sign patterns of the
/// nonzero differences: 2 * min(P(W <= w), P(W >= w)), capped at 1.
inline double signed_rank_enumeration(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  // Midranks of |d|, computed by counting.
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) ++less;
      if (std::abs(d[j]) == std::abs(d[i])) ++equal;
    }
    rank[i] = static_cast<double>(less) + (static_cast<double>(equal) + 1) / 2;
  }
  double observed = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0) observed += rank[i];
  std::uint64_t le = 0, ge = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double w = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) w += rank[i];
    if (w <= observed) ++le;
    if (w >= observed) ++ge;
  }
  const double total = std::ldexp(1.0, static_cast<int>(n));
  return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / total);
}

}  // namespace epistyle::oracle
