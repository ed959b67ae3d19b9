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

#include "epistyle/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace epistyle {
namespace {

double evaluate(const std::function<Var(Tape&)>& fn) {
  Tape tape;
  const double v = fn(tape).value()[0];
  if (!std::isfinite(v)) throw Error("grad_check: function value is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Var(Tape&)>& fn,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var out = fn(tape);
    if (out.value().size() != 1) throw ValidationError("grad_check: function must be scalar");
    if (!std::isfinite(out.value()[0])) throw Error("grad_check: function value is not finite");
    tape.backward(out);
  }
  std::vector<Tensor> analytic;
  for (Parameter* p : params) {
    if (!p->grad.all_finite()) throw Error("grad_check: non-finite gradient in " + p->name);
    analytic.push_back(p->grad);
  }

  GradCheckResult result;
  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    std::vector<std::size_t> indices(p.value.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_entries_per_param && indices.size() > options.max_entries_per_param) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_entries_per_param);
      std::sort(indices.begin(), indices.end());
    }
    for (std::size_t i : indices) {
      const Real saved = p.value[i];
      p.value[i] = static_cast<Real>(saved + options.eps);
      const double plus = evaluate(fn);
      p.value[i] = static_cast<Real>(saved - options.eps);
      const double minus = evaluate(fn);
      p.value[i] = saved;
      const double numeric = (plus - minus) / (2 * options.eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++result.entries_checked;
      if (result.worst_parameter.empty() || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_parameter = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace epistyle
