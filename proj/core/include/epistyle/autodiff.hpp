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
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epistyle/common.hpp"
#include "epistyle/tensor.hpp"

namespace epistyle {

/// A trainable tensor. Gradients accumulate in `grad` across backward
/// passes until zero_grad().
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
/// The reference returned by value() is invalidated by the next op recorded
/// on the same tape; copy it first when comparing two results.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Forward-pass switches: dropout is active only when `train` is set.
struct Mode {
  bool train = false;
  Rng* rng = nullptr;
};

/// Reverse-mode tape. A tape instance is confined to one thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the tape (read with grad()).
  Var input(Tensor value);
  /// Leaf bound to a parameter; backward accumulates into parameter.grad.
  Var param(Parameter& p);

  Var record(Tensor value, std::span<const Var> parents, Backward fn);
  Var record(Tensor value, std::initializer_list<Var> parents, Backward fn) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                  std::move(fn));
  }

  const Tensor& value(std::size_t id) const;
  const Tensor& value(Var v) const { return value(v.id); }
  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  Tensor& grad(Var v) { return grad(v.id); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id); }

  /// Seeds d(root)/d(root) = 1 and runs every recorded backward in reverse.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Parameter* param = nullptr;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

struct AttentionWeights {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
};

// Differentiable primitives. Unless stated otherwise operands are matrices
// and every operand must live on the same tape. Shape errors throw
// ValidationError naming both shapes.
namespace nn {

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
/// Same shapes, or `b` a 1 x cols row broadcast over the rows of `a`.
Var add(Var a, Var b);
Var scale(Var a, Real factor);
Var concat(std::span<const Var> parts, int axis);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Rows of `table` selected by `ids`. The optional frozen row never
/// receives gradient (padding row).
Var embedding_lookup(Var table, std::span<const int> ids,
                     std::optional<int> frozen_row = std::nullopt);
/// 1-D convolution over time. x: n x c, weight: (width*c) x f, bias: 1 x f.
/// Output: (n - width + 1) x f.
Var sliding_window_conv(Var x, Var weight, Var bias, std::size_t width);
/// Column-wise maximum over rows; gradient routes to the first argmax.
Var max_over_time(Var x);
Var relu(Var x);
/// x * w + b with w: in x out and b: 1 x out.
Var linear(Var x, Var w, Var b);
Var dropout(Var x, Real p, const Mode& mode);
Var layer_norm(Var x, Var gamma, Var beta, Real eps = Real(1e-5));
/// Row-wise softmax.
Var softmax(Var x);
/// axis 0 averages rows (result 1 x cols); axis 1 averages columns.
Var mean(Var x, int axis);
/// Row-wise x / ||x||. A zero row is an error.
Var l2_normalize(Var x);
Var sum(Var x);
Var sum_squares(Var x);
/// Mean cross-entropy of row-wise softmax(logits) against labels.
Var cross_entropy(Var logits, std::span<const int> labels);
/// Scaled dot-product attention with `heads` heads over the rows of x.
Var multihead_attention(Var x, const AttentionWeights& w, std::size_t heads);

}  // namespace nn
}  // namespace epistyle
