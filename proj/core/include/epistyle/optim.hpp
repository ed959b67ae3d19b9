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
#include <map>
#include <span>
#include <string>

#include "epistyle/autodiff.hpp"

namespace epistyle {

/// Adam moments keyed by parameter name.
class AdamState {
 public:
  explicit AdamState(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One bias-corrected Adam update of every listed parameter from its
  /// current gradient. Throws if any gradient entry is not finite.
  ///
  /// Each parameter keeps its own step counter, so parameters that sit out
  /// a step (other tasks' heads) are not advanced.
  void step(std::span<Parameter* const> params, double lr);

  std::size_t steps(const std::string& name) const;

  double beta1() const { return beta1_; }
  double beta2() const { return beta2_; }
  double eps() const { return eps_; }

 private:
  struct Moments {
    Tensor m;
    Tensor v;
    std::size_t step = 0;
  };
  double beta1_, beta2_, eps_;
  std::map<std::string, Moments> moments_;
};

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs fail to improve on the best (lowest) metric.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor = 0.5, std::size_t patience = 5);

  /// Records an epoch's validation metric; returns true if lr decayed.
  bool step(double metric);

  double lr() const { return lr_; }
  double best() const { return best_; }
  std::size_t epochs_since_best() const { return since_best_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double best_;
  std::size_t since_best_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace epistyle
