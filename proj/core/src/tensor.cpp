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

#include "epistyle/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace epistyle {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {
std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}
}  // namespace

Tensor::Tensor(Shape shape, Real fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<Real> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::initializer_list<Real> values) {
  return Tensor({rows, cols}, std::vector<Real>(values));
}

std::size_t Tensor::rows() const noexcept {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? shape_[0] : size() / shape_[0];
}

void Tensor::fill(Real value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

namespace kernel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
             std::size_t lda, const Real* b, std::size_t ldb, Real* c,
             std::size_t ldc) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const Real* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const Real* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * brow[j];
    }
    Real* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) crow[j] += static_cast<Real>(acc[j]);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const Real* a,
             std::size_t lda, const Real* b, std::size_t ldb, Real* c,
             std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * lda;
    if (std::all_of(arow, arow + k, [](Real v) { return v == 0; })) continue;
    Real* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * ldb;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(arow[p]) * brow[p];
      crow[j] += static_cast<Real>(s);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const Real* a,
             std::size_t lda, const Real* b, std::size_t ldb, Real* c,
             std::size_t ldc) {
  std::vector<double> acc(k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * lda;
    const Real* brow = b + i * ldb;
    if (std::all_of(brow, brow + n, [](Real v) { return v == 0; })) continue;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* accrow = acc.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) accrow[j] += av * brow[j];
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    Real* crow = c + p * ldc;
    for (std::size_t j = 0; j < n; ++j) crow[j] += static_cast<Real>(acc[p * n + j]);
  }
}

}  // namespace kernel
}  // namespace epistyle
