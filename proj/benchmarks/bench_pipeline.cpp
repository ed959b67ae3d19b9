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

#include "epistyle/eval.hpp"
#include "epistyle/hetgraph.hpp"
#include "epistyle/model.hpp"
#include "epistyle/synth.hpp"

using namespace epistyle;

namespace {

// A training step's forward and backward pass over one batch of 32
// episodes of 5 posts with 64 tokens each, at the default model size.
void BM_EpisodeBatch(benchmark::State& state) {
  ModelConfig cfg;
  cfg.vocab_size = 2000;
  cfg.pooling = state.range(0) ? Pooling::kTransformer : Pooling::kMean;
  EpisodeModel model(cfg, 1);
  std::vector<std::string> subs;
  for (int i = 0; i < 20; ++i) subs.push_back("s" + std::to_string(i));
  model.add_market("m", ContextVocab(subs));
  HeadConfig hc;
  hc.kind = LossKind::kCosFace;
  MetricHead head("m", hc, 32, cfg.episode_dim(), 2);
  Rng rng(3);
  std::vector<EpisodeInput> episodes(32, EpisodeInput{"m", {}});
  for (auto& ep : episodes) {
    for (int p = 0; p < 5; ++p) {
      PostInput post;
      for (int k = 0; k < 64; ++k) post.tokens.push_back(2 + static_cast<int>(uniform_index(rng, 1998)));
      post.weekday = static_cast<int>(uniform_index(rng, 7));
      post.subforum = static_cast<int>(uniform_index(rng, 20));
      ep.posts.push_back(std::move(post));
    }
  }
  std::vector<const EpisodeInput*> ptrs;
  for (const auto& e : episodes) ptrs.push_back(&e);
  std::vector<int> labels(32);
  for (int i = 0; i < 32; ++i) labels[static_cast<std::size_t>(i)] = i;
  for (auto _ : state) {
    Rng dropout(4);
    Tape tape;
    tape.backward(head.loss(tape, model.embed_batch(tape, ptrs, Mode{true, &dropout}), labels));
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EpisodeBatch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// Walks and skip-gram on one synthetic market.
void BM_GraphPretraining(benchmark::State& state) {
  SynthConfig sc;
  sc.seed = 5;
  const auto corpus = generate_corpus(sc);
  std::vector<Post> posts;
  std::vector<std::string> subs;
  for (const Post& p : corpus.posts) {
    if (p.market != sc.markets[0]) continue;
    posts.push_back(p);
    if (std::find(subs.begin(), subs.end(), p.subforum) == subs.end()) subs.push_back(p.subforum);
  }
  const WalkOptions wo{20, 40, 1};
  SkipGramOptions so;
  so.epochs = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(pretrain_context(posts, subs, default_schemes(), wo, so).values().data());
  }
}
BENCHMARK(BM_GraphPretraining)->Unit(benchmark::kMillisecond);

// Exhaustive retrieval over n episodes of 64 dims.
void BM_Retrieval(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  Tensor t({n, 64});
  for (Real& v : t.values()) v = static_cast<Real>(uniform01(rng) * 2 - 1);
  std::vector<std::string> authors;
  for (std::size_t i = 0; i < n; ++i) authors.push_back("a" + std::to_string(i / 4));
  const RetrievalIndex index(t, std::vector<std::string>(n, "m"), authors);
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_retrieval(index, 1000, 7).mrr);
}
BENCHMARK(BM_Retrieval)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

}  // namespace
