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

#include "epistyle/optim.hpp"

#include <cmath>
#include <limits>

namespace epistyle {

void AdamState::step(std::span<Parameter* const> params, double lr) {
  for (const Parameter* p : params) {
    if (p->grad.shape() != p->value.shape()) {
      throw ValidationError("adam: gradient of '" + p->name + "' has shape " +
                            shape_string(p->grad.shape()) + ", parameter " +
                            shape_string(p->value.shape()));
    }
    if (!p->grad.all_finite()) {
      throw Error("adam: non-finite gradient in parameter '" + p->name + "'");
    }
  }
  for (Parameter* p : params) {
    Moments& mo = moments_[p->name];
    if (mo.m.shape() != p->value.shape()) {
      mo.m = Tensor(p->value.shape());
      mo.v = Tensor(p->value.shape());
      mo.step = 0;
    }
    ++mo.step;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(mo.step));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(mo.step));
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      const double m = beta1_ * mo.m[i] + (1.0 - beta1_) * g;
      const double v = beta2_ * mo.v[i] + (1.0 - beta2_) * g * g;
      mo.m[i] = static_cast<Real>(m);
      mo.v[i] = static_cast<Real>(v);
      const double update = lr * (m / c1) / (std::sqrt(v / c2) + eps_);
      p->value[i] = static_cast<Real>(p->value[i] - update);
    }
  }
}

std::size_t AdamState::steps(const std::string& name) const {
  auto it = moments_.find(name);
  return it == moments_.end() ? 0 : it->second.step;
}

PlateauScheduler::PlateauScheduler(double lr, double factor, std::size_t patience)
    : lr_(lr), factor_(factor), patience_(patience),
      best_(std::numeric_limits<double>::infinity()) {
  if (!(lr > 0)) throw ValidationError("scheduler: learning rate must be positive");
  if (!(factor > 0 && factor < 1)) throw ValidationError("scheduler: factor must lie in (0, 1)");
}

bool PlateauScheduler::step(double metric) {
  if (metric < best_) {
    best_ = metric;
    since_best_ = 0;
    return false;
  }
  if (++since_best_ >= patience_) {
    lr_ *= factor_;
    since_best_ = 0;
    return true;
  }
  return false;
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0;
  for (const Parameter* p : params)
    for (Real g : p->grad.values()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const Real factor = static_cast<Real>(max_norm / norm);
    for (Parameter* p : params)
      for (Real& g : p->grad.values()) g *= factor;
  }
  return norm;
}

}  // namespace epistyle
