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

#include <cmath>
#include <map>

#include "epistyle/hetgraph.hpp"
#include "test_util.hpp"

using namespace epistyle;
using epistyle::testing::make_post;
using epistyle::testing::TempDir;
using epistyle::testing::WarningCapture;

namespace {

// Two users, two threads in one subforum, each user started one thread and
// replied in the other.
std::vector<Post> two_thread_forum() {
  return {make_post("m", "u1", 1, "p1", "x", "s", "t1", true),
          make_post("m", "u2", 2, "p2", "x", "s", "t1", false),
          make_post("m", "u2", 3, "p3", "x", "s", "t2", true),
          make_post("m", "u1", 4, "p4", "x", "s", "t2", false)};
}

// Random forum with several subforums and threads.
std::vector<Post> random_forum(std::uint64_t seed, std::size_t n_posts) {
  Rng rng(seed);
  std::vector<Post> posts;
  std::map<std::string, bool> started;
  for (std::size_t i = 0; i < n_posts; ++i) {
    const std::string thread = "t" + std::to_string(uniform_index(rng, 30));
    const std::string sub = "s" + std::to_string(std::stoi(thread.substr(1)) % 4);
    const bool start = !started[thread];
    started[thread] = true;
    posts.push_back(make_post("m", "u" + std::to_string(uniform_index(rng, 12)),
                              static_cast<std::int64_t>(i + 1), "p" + std::to_string(i), "x", sub,
                              thread, start));
  }
  return posts;
}

bool is_scheme_prefix(const HetGraph& g, const Walk& walk, const MetapathScheme& s) {
  const std::size_t period = s.types.size() - 1;
  for (std::size_t i = 0; i < walk.size(); ++i) {
    if (g.type(walk[i]) != s.types[i % period]) return false;
    if (i && !g.has_edge(walk[i - 1], walk[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("build_graph on a thread with one reply") {
  const std::vector<Post> posts{make_post("m", "u1", 1, "p1", "x", "s", "t", true),
                                make_post("m", "u2", 2, "p2", "x", "s", "t", false)};
  const HetGraph g = build_graph(posts);
  CHECK(g.count(NodeType::kUser) == 2);
  CHECK(g.count(NodeType::kSubforum) == 1);
  CHECK(g.count(NodeType::kThread) == 1);
  CHECK(g.count(NodeType::kPost) == 2);
  CHECK(g.num_edges() == 6);
  const auto u1 = *g.find(NodeType::kUser, "u1"), u2 = *g.find(NodeType::kUser, "u2");
  const auto t = *g.find(NodeType::kThread, "t"), s = *g.find(NodeType::kSubforum, "s");
  const auto p1 = *g.find(NodeType::kPost, "p1"), p2 = *g.find(NodeType::kPost, "p2");
  CHECK(g.has_edge(u1, t));
  CHECK_FALSE(g.has_edge(u2, t));
  CHECK(g.has_edge(s, t));
  CHECK(g.has_edge(t, p1));
  CHECK(g.has_edge(t, p2));
  CHECK(g.has_edge(u1, p1));
  CHECK(g.has_edge(u2, p2));
}

TEST_CASE("build_graph of nothing is empty") { CHECK(build_graph(std::vector<Post>{}).num_nodes() == 0); }

TEST_CASE("schema rejects disallowed edges") {
  HetGraph g;
  const auto u = g.add_node(NodeType::kUser, "u");
  const auto s = g.add_node(NodeType::kSubforum, "s");
  CHECK_THROWS(g.add_edge(u, s));
  CHECK_FALSE(edge_allowed(NodeType::kUser, NodeType::kUser));
  CHECK(edge_allowed(NodeType::kPost, NodeType::kThread));
}

TEST_CASE("graph file round-trips") {
  TempDir dir("graph");
  const HetGraph g = build_graph(random_forum(1, 60));
  g.save(dir / "g.json");
  const HetGraph back = HetGraph::load(dir / "g.json");
  REQUIRE(back.num_nodes() == g.num_nodes());
  CHECK(back.num_edges() == g.num_edges());
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    CHECK(back.label(i) == g.label(i));
    CHECK(back.name(i) == g.name(i));
  }
}

TEST_CASE("scheme parsing") {
  CHECK(default_schemes().size() == 7);
  CHECK(default_schemes()[0].name() == "UPTSTPU");
  CHECK(MetapathScheme::parse("UTSTU").types.size() == 5);
  CHECK_THROWS(MetapathScheme::parse("UTS"));   // does not end with U
  CHECK_THROWS(MetapathScheme::parse("USTU"));  // U-S is not an edge type
}

TEST_CASE("UTSTU instance connects two users through a shared subforum") {
  const HetGraph g = build_graph(two_thread_forum());
  const std::vector<MetapathScheme> scheme{MetapathScheme::parse("UTSTU")};
  const auto walks = sample_walks(g, scheme, {200, 5, 3});
  const auto u1 = *g.find(NodeType::kUser, "u1"), u2 = *g.find(NodeType::kUser, "u2");
  bool reached = false;
  for (const auto& w : walks) {
    CHECK(w.size() == 5);
    if (w.front() == u1 && w.back() == u2) reached = true;
  }
  CHECK(reached);
}

TEST_CASE("walks follow their scheme and are reproducible") {
  const HetGraph g = build_graph(random_forum(2, 200));
  const auto& schemes = default_schemes();
  const WalkOptions opt{21, 30, 99};
  const auto walks = sample_walks(g, schemes, opt);
  CHECK(walks.size() == g.count(NodeType::kUser) * 21);
  for (std::size_t i = 0; i < walks.size(); ++i) {
    const auto& scheme = schemes[(i % 21) % schemes.size()];
    CHECK(is_scheme_prefix(g, walks[i], scheme));
    CHECK(walks[i].size() <= 30);
  }
  CHECK(sample_walks(g, schemes, opt) == walks);
}

TEST_CASE("unique neighbors make a walk fully determined") {
  // Star: one user started one thread in one subforum.
  const std::vector<Post> posts{make_post("m", "u", 1, "p", "x", "s", "t", true)};
  const HetGraph g = build_graph(posts);
  const std::vector<MetapathScheme> scheme{MetapathScheme::parse("UTSTU")};
  const auto u = *g.find(NodeType::kUser, "u"), t = *g.find(NodeType::kThread, "t"),
             s = *g.find(NodeType::kSubforum, "s");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto walks = sample_walks(g, scheme, {3, 9, seed});
    for (const auto& w : walks) CHECK(w == Walk{u, t, s, t, u, t, s, t, u});
  }
}

TEST_CASE("walk length 1 gives start nodes only") {
  const HetGraph g = build_graph(two_thread_forum());
  for (const auto& w : sample_walks(g, default_schemes(), {7, 1, 0})) {
    REQUIRE(w.size() == 1);
    CHECK(g.type(w[0]) == NodeType::kUser);
  }
}

TEST_CASE("isolated users emit length-1 walks with a warning") {
  HetGraph g;
  g.add_node(NodeType::kUser, "lonely");
  WarningCapture w;
  const auto walks = sample_walks(g, default_schemes(), {4, 10, 0});
  CHECK(walks.size() == 4);
  for (const auto& walk : walks) CHECK(walk.size() == 1);
  CHECK(w.messages.size() == 1);
}

TEST_CASE("next hop is uniform over two typed neighbors") {
  const HetGraph g = build_graph(two_thread_forum());
  const std::vector<MetapathScheme> scheme{MetapathScheme::parse("UPTU")};
  const auto u1 = *g.find(NodeType::kUser, "u1");
  const auto p1 = *g.find(NodeType::kPost, "p1");
  REQUIRE(g.neighbors(u1, NodeType::kPost).size() == 2);
  const auto walks = sample_walks(g, scheme, {10000, 2, 7});
  std::size_t first = 0, total = 0;
  for (const auto& w : walks) {
    if (w[0] != u1) continue;
    ++total;
    if (w[1] == p1) ++first;
  }
  REQUIRE(total == 10000);
  CHECK(std::abs(static_cast<double>(first) / total - 0.5) < 0.03);
}

TEST_CASE("walk file round-trips") {
  TempDir dir("walks");
  const HetGraph g = build_graph(random_forum(3, 50));
  const auto walks = sample_walks(g, default_schemes(), {3, 12, 1});
  write_walks(dir / "w.txt", g, walks);
  CHECK(read_walks(dir / "w.txt") == walks_to_labels(g, walks));
}

TEST_CASE("skip-gram pair loss") {
  SUBCASE("zero vectors with five negatives give 6 ln 2") {
    const std::vector<double> zero(4, 0.0);
    const std::vector<std::vector<double>> negs(5, zero);
    CHECK(skipgram_pair_loss(zero, zero, negs) == doctest::Approx(6 * std::log(2.0)));
    CHECK(6 * std::log(2.0) == doctest::Approx(4.1589).epsilon(1e-4));
  }
  SUBCASE("saturated scores drive the loss to zero") {
    const std::vector<double> c{30, 0}, x{30, 0}, n{-30, 0};
    const std::vector<std::vector<double>> negs(5, n);
    CHECK(skipgram_pair_loss(c, x, negs) < 1e-12);
  }
  SUBCASE("gradients match central differences") {
    Rng rng(17);
    auto rnd = [&](std::size_t d) {
      std::vector<double> v(d);
      for (auto& x : v) x = uniform01(rng) - 0.5;
      return v;
    };
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t d = 2 + uniform_index(rng, 6);
      std::vector<double> c = rnd(d), x = rnd(d);
      std::vector<std::vector<double>> negs;
      for (std::size_t k = 0; k < 1 + uniform_index(rng, 5); ++k) negs.push_back(rnd(d));
      const SkipGramPairGrad g = skipgram_pair_gradients(c, x, negs);
      const double eps = 1e-5;
      auto check = [&](std::vector<double>& v, const std::vector<double>& analytic) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double keep = v[i];
          v[i] = keep + eps;
          const double up = skipgram_pair_loss(c, x, negs);
          v[i] = keep - eps;
          const double down = skipgram_pair_loss(c, x, negs);
          v[i] = keep;
          const double numeric = (up - down) / (2 * eps);
          const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
          CHECK(std::abs(numeric - analytic[i]) / denom <= 1e-4);
        }
      };
      check(c, g.center);
      check(x, g.context);
      for (std::size_t k = 0; k < negs.size(); ++k) check(negs[k], g.negatives[k]);
    }
  }
}

TEST_CASE("skip-gram training") {
  SUBCASE("tiny 4-node graph, seed 7: loss drops by epoch 2") {
    const std::vector<Post> posts{make_post("m", "u", 1, "p", "x", "s", "t", true)};
    const HetGraph g = build_graph(posts);
    REQUIRE(g.num_nodes() == 4);
    const auto walks = walks_to_labels(g, sample_walks(g, default_schemes(), {20, 20, 7}));
    SkipGramOptions opt;
    opt.dim = 16;
    opt.window = 3;
    opt.negatives = 2;
    opt.epochs = 2;
    opt.seed = 7;
    const auto r = train_skipgram(walks, opt);
    REQUIRE(r.epoch_loss.size() == 2);
    CHECK(r.epoch_loss[1] < r.epoch_loss[0]);
  }
  SUBCASE("epoch loss is non-increasing over the first three epochs") {
    const HetGraph g = build_graph(random_forum(4, 150));
    const auto walks = walks_to_labels(g, sample_walks(g, default_schemes(), {14, 40, 7}));
    SkipGramOptions opt;
    opt.dim = 32;
    opt.epochs = 3;
    opt.seed = 7;
    const auto r = train_skipgram(walks, opt);
    REQUIRE(r.epoch_loss.size() == 3);
    CHECK(r.epoch_loss[1] <= r.epoch_loss[0]);
    CHECK(r.epoch_loss[2] <= r.epoch_loss[1]);
    for (Real v : r.embeddings.vectors.values()) CHECK(std::isfinite(v));
    // Deterministic for a seed.
    CHECK(train_skipgram(walks, opt).embeddings.vectors == r.embeddings.vectors);
  }
  SUBCASE("invalid options") {
    const std::vector<std::vector<std::string>> walks{{"U0", "T0", "U0"}};
    SkipGramOptions opt;
    opt.dim = 0;
    CHECK_THROWS(train_skipgram(walks, opt));
    opt.dim = 8;
    opt.window = 0;
    CHECK_THROWS(train_skipgram(walks, opt));
  }
}

TEST_CASE("context export") {
  const auto posts = random_forum(5, 120);
  const HetGraph g = build_graph(posts);
  const auto walks = walks_to_labels(g, sample_walks(g, default_schemes(), {7, 20, 2}));
  SkipGramOptions opt;
  opt.epochs = 1;
  const auto emb = train_skipgram(walks, opt).embeddings;
  SUBCASE("three subforums give three 128-wide rows equal to the stored vectors") {
    const std::vector<std::string> subs{"s0", "s1", "s2"};
    const Tensor rows = export_context_init(emb, g, subs, 128);
    CHECK(rows.shape() == Shape{3, 128});
    for (std::size_t r = 0; r < 3; ++r) {
      const auto v = *emb.find(g.label(*g.find(NodeType::kSubforum, subs[r])));
      CHECK(std::equal(v.begin(), v.end(), rows.row(r).begin()));
    }
  }
  SUBCASE("absent subforum gives a zero row") {
    const std::vector<std::string> subs{"s0", "nowhere"};
    WarningCapture w;
    const Tensor rows = export_context_init(emb, g, subs, 128);
    for (Real v : rows.row(1)) CHECK(v == 0);
    CHECK(w.messages.size() == 1);
  }
  SUBCASE("dimension mismatch is an error") {
    const std::vector<std::string> subs{"s0"};
    CHECK_THROWS_AS(export_context_init(emb, g, subs, 64), ValidationError);
  }
  SUBCASE("embedding file round-trips") {
    TempDir dir("emb");
    emb.save(dir / "e.tsv");
    const auto back = NodeEmbeddings::load(dir / "e.tsv");
    CHECK(back.labels == emb.labels);
    CHECK(back.vectors == emb.vectors);
  }
}
