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

#include <doctest.h>

#include <limits>

#include "grad_suite.hpp"

using namespace epistyle;
using namespace epistyle::gradsuite;

namespace {

constexpr double kPrimitiveTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;
constexpr double kZeroTolerance = 1e-10;

}  // namespace

TEST_CASE("sum of squares is exact to rounding") {
  Parameter p("x", Tensor::matrix(2, 2, {1, -2, Real(0.5), 3}));
  Parameter* ptrs[] = {&p};
  const auto r = grad_check([&](Tape& t) { return nn::sum_squares(t.param(p)); }, ptrs);
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("a corrupted backward is caught") {
  Parameter p("x", Tensor::matrix(1, 3, {1, 2, 3}));
  Parameter* ptrs[] = {&p};
  // y = 2x with a backward that claims dy/dx = 3.
  const auto fn = [&](Tape& t) {
    Var x = t.param(p);
    Tensor v = x.value();
    for (Real& e : v.values()) e *= 2;
    Var y = t.record(std::move(v), {x}, [x](Tape& tape, std::size_t self) {
      const Tensor g = tape.grad(self);
      Tensor& gx = tape.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 3 * g[i];
    });
    return nn::sum(y);
  };
  CHECK(grad_check(fn, ptrs).max_relative_error > 0.1);
}

TEST_CASE("non-finite output is an error") {
  Parameter p("x", Tensor::matrix(1, 1, {1}));
  Parameter* ptrs[] = {&p};
  CHECK_THROWS_AS(grad_check([&](Tape& t) {
                    return nn::scale(t.param(p), std::numeric_limits<Real>::infinity());
                  },
                  ptrs),
                  Error);
}

TEST_CASE("primitive gradients") {
  for (const GradOutcome& o : primitive_outcomes()) {
    INFO(o.name << ": worst " << o.worst);
    CHECK(o.max_relative_error <= kPrimitiveTolerance);
    CHECK(o.max_zero_gradient < kZeroTolerance);
    CHECK(o.gradient_scale > 1e-3);
    CHECK(o.entries_checked > 0);
  }
}

TEST_CASE("full episode model gradients for every head and pooling") {
  const auto outcomes = model_outcomes();
  CHECK(outcomes.size() == 8);
  for (const GradOutcome& o : outcomes) {
    INFO(o.name << ": worst " << o.worst);
    CHECK(o.max_relative_error <= kModelTolerance);
    CHECK(o.max_zero_gradient < kZeroTolerance);
    CHECK(o.gradient_scale > 1e-3);
  }
}
