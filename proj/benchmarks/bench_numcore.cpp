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


#include <benchmark/benchmark.h>

#include "epistyle/autodiff.hpp"

using namespace epistyle;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({r, c});
  for (Real& v : t.values()) v = static_cast<Real>(uniform01(rng) * 2 - 1);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Parameter a("a", random_tensor(n, n, 1)), b("b", random_tensor(n, n, 2));
  for (auto _ : state) {
    Tape tape;
    Var y = nn::matmul(tape.param(a), tape.param(b));
    benchmark::DoNotOptimize(y.value().values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Parameter a("a", random_tensor(n, n, 1)), b("b", random_tensor(n, n, 2));
  for (auto _ : state) {
    Tape tape;
    tape.backward(nn::sum(nn::matmul(tape.param(a), tape.param(b))));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(6 * n * n * n));
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

// One post through a width-w convolution: 128 tokens, 300-dim embeddings,
// 100 filters.
void BM_ConvForwardBackward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  Parameter x("x", random_tensor(128, 300, 3)), w("w", random_tensor(width * 300, 100, 4)),
      b("b", random_tensor(1, 100, 5));
  for (auto _ : state) {
    Tape tape;
    Var y = nn::max_over_time(nn::sliding_window_conv(tape.param(x), tape.param(w), tape.param(b), width));
    tape.backward(nn::sum(y));
  }
}
BENCHMARK(BM_ConvForwardBackward)->Arg(2)->Arg(3)->Arg(4)->Arg(5);

void BM_Attention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 64;
  std::vector<Parameter> w;
  w.reserve(8);
  for (int i = 0; i < 8; ++i) w.emplace_back("w", random_tensor(i % 2 ? 1 : d, d, 10 + i));
  Parameter x("x", random_tensor(n, d, 6));
  for (auto _ : state) {
    Tape tape;
    const AttentionWeights aw{tape.param(w[0]), tape.param(w[1]), tape.param(w[2]), tape.param(w[3]),
                              tape.param(w[4]), tape.param(w[5]), tape.param(w[6]), tape.param(w[7])};
    tape.backward(nn::sum(nn::multihead_attention(tape.param(x), aw, 4)));
  }
}
BENCHMARK(BM_Attention)->Arg(5)->Arg(20)->Arg(80);

}  // namespace
