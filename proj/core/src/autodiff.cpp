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

#include "epistyle/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace epistyle {

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0);
  }
}

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, true, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
  if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
  nodes_.push_back(Node{{}, {}, &p, true, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backward fn) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape != this) throw Error("operands recorded on different tapes");
    needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs,
                        needs ? std::move(fn) : Backward{}});
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.param ? n.param->value : n.value;
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.param) return n.param->grad;
  if (n.grad.empty()) n.grad = Tensor(value(id).shape());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw Error("backward root belongs to another tape");
  if (value(root.id).size() != 1) {
    throw ValidationError("backward root must be a scalar, got shape " +
                          shape_string(value(root.id).shape()));
  }
  if (!nodes_[root.id].requires_grad) return;
  grad(root.id)[0] += 1;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

namespace nn {
namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": incompatible shapes " +
                        shape_string(a.shape()) + " and " + shape_string(b.shape()));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw ValidationError(std::string(op) + ": expected a matrix, got shape " +
                          shape_string(t.shape()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul", A);
  require_matrix("matmul", B);
  if (A.cols() != B.rows()) shape_error("matmul", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  kernel::gemm_nn(m, n, k, A.data(), k, B.data(), n, out.data(), n);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, n, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      kernel::gemm_nt(m, k, n, g.data(), n, t.value(b).data(), n, t.grad(a).data(), k);
    }
    if (t.requires_grad(b)) {
      kernel::gemm_tn(m, n, k, t.value(a).data(), k, g.data(), n, t.grad(b).data(), n);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_matrix("matmul_nt", A);
  require_matrix("matmul_nt", B);
  if (A.cols() != B.cols()) shape_error("matmul_nt", A, B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out({m, n});
  kernel::gemm_nt(m, n, k, A.data(), k, B.data(), k, out.data(), n);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, n, k](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    // dA = g * B, dB = g^T * A
    if (t.requires_grad(a)) {
      kernel::gemm_nn(m, k, n, g.data(), n, t.value(b).data(), k, t.grad(a).data(), k);
    }
    if (t.requires_grad(b)) {
      kernel::gemm_tn(m, k, n, g.data(), n, t.value(a).data(), k, t.grad(b).data(), k);
    }
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  require_matrix("transpose", A);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
  return a.tape->record(std::move(out), {a}, [a, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
  });
}

Var add(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool same = A.shape() == B.shape();
  const bool row_broadcast = !same && B.rank() == 2 && A.rank() == 2 &&
                             B.rows() == 1 && B.cols() == A.cols();
  if (!same && !row_broadcast) shape_error("add", A, B);
  Tensor out = A;
  const std::size_t rows = A.rows(), cols = A.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out.at(r, c) += same ? B.at(r, c) : B[c];
    }
  }
  return a.tape->record(std::move(out), {a, b},
                        [a, b, same, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad(b);
      if (same) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      } else {
        for (std::size_t c = 0; c < cols; ++c) {
          double s = 0;
          for (std::size_t r = 0; r < rows; ++r) s += g.at(r, c);
          gb[c] += static_cast<Real>(s);
        }
      }
    }
  });
}

Var scale(Var a, Real factor) {
  Tensor out = a.value();
  for (Real& v : out.values()) v *= factor;
  return a.tape->record(std::move(out), {a}, [a, factor](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ValidationError("concat: no operands");
  if (axis != 0 && axis != 1) throw ValidationError("concat: axis must be 0 or 1");
  const Tensor& first = parts[0].value();
  require_matrix("concat", first);
  std::size_t rows = 0, cols = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    require_matrix("concat", v);
    if (axis == 0) {
      if (v.cols() != first.cols()) shape_error("concat", first, v);
      rows += v.rows();
    } else {
      if (v.rows() != first.rows()) shape_error("concat", first, v);
      cols += v.cols();
    }
  }
  if (axis == 0) cols = first.cols();
  else rows = first.rows();
  Tensor out({rows, cols});
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    offsets.push_back(offset);
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (axis == 0) out.at(offset + r, c) = v.at(r, c);
        else out.at(r, offset + c) = v.at(r, c);
      }
    }
    offset += axis == 0 ? v.rows() : v.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return parts[0].tape->record(
      std::move(out), parts, [saved, offsets, axis](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (std::size_t i = 0; i < saved.size(); ++i) {
          if (!t.requires_grad(saved[i])) continue;
          Tensor& gp = t.grad(saved[i]);
          for (std::size_t r = 0; r < gp.rows(); ++r) {
            for (std::size_t c = 0; c < gp.cols(); ++c) {
              gp.at(r, c) += axis == 0 ? g.at(offsets[i] + r, c) : g.at(r, offsets[i] + c);
            }
          }
        }
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& A = a.value();
  require_matrix("slice_cols", A);
  if (begin + count > A.cols()) {
    throw ValidationError("slice_cols: range exceeds shape " + shape_string(A.shape()));
  }
  Tensor out({A.rows(), count});
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out.at(r, c) = A.at(r, begin + c);
  return a.tape->record(std::move(out), {a}, [a, begin, count](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad(a);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) ga.at(r, begin + c) += g.at(r, c);
  });
}

Var embedding_lookup(Var table, std::span<const int> ids, std::optional<int> frozen_row) {
  const Tensor& T = table.value();
  require_matrix("embedding_lookup", T);
  const std::size_t dim = T.cols();
  Tensor out({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows()) {
      throw ValidationError("embedding_lookup: id " + std::to_string(ids[i]) +
                            " outside table of " + std::to_string(T.rows()) + " rows");
    }
    std::copy_n(T.row(static_cast<std::size_t>(ids[i])).data(), dim, out.row(i).data());
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table},
                            [table, saved, frozen_row, dim](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gt = t.grad(table);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      if (frozen_row && saved[i] == *frozen_row) continue;
      Real* dst = gt.row(static_cast<std::size_t>(saved[i])).data();
      const Real* src = g.row(i).data();
      for (std::size_t c = 0; c < dim; ++c) dst[c] += src[c];
    }
  });
}

Var sliding_window_conv(Var x, Var weight, Var bias, std::size_t width) {
  const Tensor& X = x.value();
  const Tensor& W = weight.value();
  const Tensor& B = bias.value();
  require_matrix("sliding_window_conv", X);
  require_matrix("sliding_window_conv", W);
  const std::size_t n = X.rows(), c = X.cols(), f = W.cols();
  if (width == 0 || W.rows() != width * c) shape_error("sliding_window_conv", X, W);
  if (B.size() != f) shape_error("sliding_window_conv", W, B);
  if (n < width) {
    throw ValidationError("sliding_window_conv: sequence of " + std::to_string(n) +
                          " rows shorter than filter width " + std::to_string(width));
  }
  const std::size_t steps = n - width + 1;
  Tensor out({steps, f});
  for (std::size_t s = 0; s < steps; ++s) std::copy_n(B.data(), f, out.row(s).data());
  // Window s is the contiguous slice x[s*c, (s+width)*c): row stride c.
  kernel::gemm_nn(steps, f, width * c, X.data(), c, W.data(), f, out.data(), f);
  return x.tape->record(std::move(out), {x, weight, bias},
                        [x, weight, bias, steps, f, c, width](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(x)) {
      kernel::gemm_nt(steps, width * c, f, g.data(), f, t.value(weight).data(), f,
                      t.grad(x).data(), c);
    }
    if (t.requires_grad(weight)) {
      kernel::gemm_tn(steps, f, width * c, t.value(x).data(), c, g.data(), f,
                      t.grad(weight).data(), f);
    }
    if (t.requires_grad(bias)) {
      Tensor& gb = t.grad(bias);
      for (std::size_t j = 0; j < f; ++j) {
        double s = 0;
        for (std::size_t r = 0; r < steps; ++r) s += g.at(r, j);
        gb[j] += static_cast<Real>(s);
      }
    }
  });
}

Var max_over_time(Var x) {
  const Tensor& X = x.value();
  require_matrix("max_over_time", X);
  if (X.rows() == 0) throw ValidationError("max_over_time: empty sequence");
  const std::size_t cols = X.cols();
  Tensor out({1, cols});
  std::vector<std::size_t> argmax(cols, 0);
  for (std::size_t j = 0; j < cols; ++j) {
    Real best = X.at(0, j);
    for (std::size_t r = 1; r < X.rows(); ++r) {
      if (X.at(r, j) > best) {
        best = X.at(r, j);
        argmax[j] = r;
      }
    }
    out[j] = best;
  }
  return x.tape->record(std::move(out), {x}, [x, argmax](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    for (std::size_t j = 0; j < argmax.size(); ++j) gx.at(argmax[j], j) += g[j];
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (Real& v : out.values()) v = v > 0 ? v : Real(0);
  return x.tape->record(std::move(out), {x}, [x](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0) gx[i] += g[i];
  });
}

Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

Var dropout(Var x, Real p, const Mode& mode) {
  if (p < 0 || p >= 1) throw ValidationError("dropout: p must lie in [0, 1)");
  if (!mode.train || p == 0) return x;
  if (!mode.rng) throw ValidationError("dropout: training mode requires an rng");
  Tensor out = x.value();
  std::vector<Real> mask(out.size());
  const Real keep_scale = Real(1) / (Real(1) - p);
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = uniform01(*mode.rng) < p ? Real(0) : keep_scale;
    out[i] *= mask[i];
  }
  return x.tape->record(std::move(out), {x}, [x, mask](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

Var layer_norm(Var x, Var gamma, Var beta, Real eps) {
  const Tensor& X = x.value();
  require_matrix("layer_norm", X);
  const std::size_t rows = X.rows(), cols = X.cols();
  if (gamma.value().size() != cols) shape_error("layer_norm", X, gamma.value());
  if (beta.value().size() != cols) shape_error("layer_norm", X, beta.value());
  Tensor xhat({rows, cols});
  std::vector<double> inv_std(rows);
  Tensor out({rows, cols});
  const Tensor& G = gamma.value();
  const Tensor& Bt = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += X.at(r, c);
    mu /= static_cast<double>(cols);
    double var = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = X.at(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat.at(r, c) = static_cast<Real>((X.at(r, c) - mu) * inv_std[r]);
      out.at(r, c) = G[c] * xhat.at(r, c) + Bt[c];
    }
  }
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat, inv_std, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& G = t.value(gamma);
    if (t.requires_grad(gamma) || t.requires_grad(beta)) {
      for (std::size_t c = 0; c < cols; ++c) {
        double dg = 0, db = 0;
        for (std::size_t r = 0; r < rows; ++r) {
          dg += static_cast<double>(g.at(r, c)) * xhat.at(r, c);
          db += g.at(r, c);
        }
        if (t.requires_grad(gamma)) t.grad(gamma)[c] += static_cast<Real>(dg);
        if (t.requires_grad(beta)) t.grad(beta)[c] += static_cast<Real>(db);
      }
    }
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad(x);
      const double n = static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0, mean_dx = 0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = static_cast<double>(g.at(r, c)) * G[c];
          mean_d += d;
          mean_dx += d * xhat.at(r, c);
        }
        mean_d /= n;
        mean_dx /= n;
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = static_cast<double>(g.at(r, c)) * G[c];
          gx.at(r, c) += static_cast<Real>(inv_std[r] * (d - mean_d - xhat.at(r, c) * mean_dx));
        }
      }
    }
  });
}

Var softmax(Var x) {
  const Tensor& X = x.value();
  require_matrix("softmax", X);
  Tensor out({X.rows(), X.cols()});
  for (std::size_t r = 0; r < X.rows(); ++r) {
    auto row = X.row(r);
    const Real mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (Real v : row) z += std::exp(static_cast<double>(v) - mx);
    for (std::size_t c = 0; c < row.size(); ++c) {
      out.at(r, c) = static_cast<Real>(std::exp(static_cast<double>(row[c]) - mx) / z);
    }
  }
  return x.tape->record(out, {x}, [x, out](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      double dot = 0;
      for (std::size_t c = 0; c < out.cols(); ++c)
        dot += static_cast<double>(g.at(r, c)) * out.at(r, c);
      for (std::size_t c = 0; c < out.cols(); ++c)
        gx.at(r, c) += static_cast<Real>(out.at(r, c) * (g.at(r, c) - dot));
    }
  });
}

Var mean(Var x, int axis) {
  const Tensor& X = x.value();
  require_matrix("mean", X);
  const std::size_t rows = X.rows(), cols = X.cols();
  if (axis != 0 && axis != 1) throw ValidationError("mean: axis must be 0 or 1");
  if (rows == 0 || cols == 0) throw ValidationError("mean: empty operand");
  Tensor out(axis == 0 ? Shape{1, cols} : Shape{rows, 1});
  if (axis == 0) {
    for (std::size_t c = 0; c < cols; ++c) {
      double s = 0;
      for (std::size_t r = 0; r < rows; ++r) s += X.at(r, c);
      out[c] = static_cast<Real>(s / static_cast<double>(rows));
    }
  } else {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) s += X.at(r, c);
      out[r] = static_cast<Real>(s / static_cast<double>(cols));
    }
  }
  return x.tape->record(std::move(out), {x}, [x, axis, rows, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    const Real inv = axis == 0 ? Real(1) / static_cast<Real>(rows)
                               : Real(1) / static_cast<Real>(cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        gx.at(r, c) += (axis == 0 ? g[c] : g[r]) * inv;
  });
}

Var l2_normalize(Var x) {
  const Tensor& X = x.value();
  require_matrix("l2_normalize", X);
  Tensor out({X.rows(), X.cols()});
  std::vector<double> norms(X.rows());
  for (std::size_t r = 0; r < X.rows(); ++r) {
    double s = 0;
    for (Real v : X.row(r)) s += static_cast<double>(v) * v;
    norms[r] = std::sqrt(s);
    if (norms[r] == 0.0) throw ValidationError("l2_normalize: zero-norm row");
    for (std::size_t c = 0; c < X.cols(); ++c)
      out.at(r, c) = static_cast<Real>(X.at(r, c) / norms[r]);
  }
  return x.tape->record(out, {x}, [x, out, norms](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(x);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      double dot = 0;
      for (std::size_t c = 0; c < out.cols(); ++c)
        dot += static_cast<double>(g.at(r, c)) * out.at(r, c);
      for (std::size_t c = 0; c < out.cols(); ++c)
        gx.at(r, c) += static_cast<Real>((g.at(r, c) - out.at(r, c) * dot) / norms[r]);
    }
  });
}

Var sum(Var x) {
  double s = 0;
  for (Real v : x.value().values()) s += v;
  return x.tape->record(Tensor::scalar(static_cast<Real>(s)), {x},
                        [x](Tape& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    for (Real& v : t.grad(x).values()) v += g;
  });
}

Var sum_squares(Var x) {
  double s = 0;
  for (Real v : x.value().values()) s += static_cast<double>(v) * v;
  return x.tape->record(Tensor::scalar(static_cast<Real>(s)), {x},
                        [x](Tape& t, std::size_t self) {
    const Real g = t.grad(self)[0];
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2 * g * xv[i];
  });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& Z = logits.value();
  require_matrix("cross_entropy", Z);
  const std::size_t n = Z.rows(), classes = Z.cols();
  if (labels.size() != n) {
    throw ValidationError("cross_entropy: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(n) + " rows");
  }
  Tensor probs({n, classes});
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      throw ValidationError("cross_entropy: label " + std::to_string(labels[r]) +
                            " outside [0, " + std::to_string(classes) + ")");
    }
    auto row = Z.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (Real v : row) z += std::exp(v - mx);
    const double log_z = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c)
      probs.at(r, c) = static_cast<Real>(std::exp(row[c] - log_z));
    total += log_z - row[static_cast<std::size_t>(labels[r])];
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return logits.tape->record(
      Tensor::scalar(static_cast<Real>(total / static_cast<double>(n))), {logits},
      [logits, probs, saved, n](Tape& t, std::size_t self) {
        const Real g = t.grad(self)[0] / static_cast<Real>(n);
        Tensor& gz = t.grad(logits);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          for (std::size_t c = 0; c < probs.cols(); ++c) {
            const Real target = static_cast<int>(c) == saved[r] ? Real(1) : Real(0);
            gz.at(r, c) += g * (probs.at(r, c) - target);
          }
        }
      });
}

Var multihead_attention(Var x, const AttentionWeights& w, std::size_t heads) {
  const std::size_t d = w.wq.cols();
  if (heads == 0 || d % heads != 0) {
    throw ValidationError("multihead_attention: width " + std::to_string(d) +
                          " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  Var q = linear(x, w.wq, w.bq);
  Var k = linear(x, w.wk, w.bk);
  Var v = linear(x, w.wv, w.bv);
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  std::vector<Var> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var attn = softmax(scale(matmul_nt(qh, kh), inv_sqrt));
    outputs.push_back(matmul(attn, vh));
  }
  return linear(concat(outputs, 1), w.wo, w.bo);
}

}  // namespace nn
}  // namespace epistyle
