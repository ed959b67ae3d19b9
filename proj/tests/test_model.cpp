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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "epistyle/model.hpp"
#include "epistyle/optim.hpp"
#include "test_util.hpp"

using namespace epistyle;
using epistyle::testing::make_post;
using epistyle::testing::TempDir;

namespace {

ModelConfig small_config(Pooling pooling = Pooling::kMean) {
  ModelConfig c;
  c.vocab_size = 30;
  c.token_dim = 6;
  c.text_dim = 8;
  c.time_dim = 4;
  c.context_dim = 5;
  c.filter_widths = {2, 3};
  c.filters_per_width = 3;
  c.pooling = pooling;
  c.transformer_layers = 2;
  c.transformer_heads = 2;
  c.transformer_dim = 8;
  c.transformer_ff = 12;
  c.output_dim = 6;
  return c;
}

Tensor random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({r, c});
  for (Real& v : t.values()) v = static_cast<Real>(uniform01(rng) * 2 - 1);
  return t;
}

PostInput random_post(Rng& rng, std::size_t vocab, std::size_t subforums) {
  PostInput p;
  const std::size_t n = 3 + uniform_index(rng, 10);
  for (std::size_t i = 0; i < n; ++i) p.tokens.push_back(2 + static_cast<int>(uniform_index(rng, vocab - 2)));
  p.weekday = static_cast<int>(uniform_index(rng, 7));
  p.subforum = static_cast<int>(uniform_index(rng, subforums));
  return p;
}

double cosine(std::span<const Real> a, std::span<const Real> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Mean cross-entropy of softmax(logits) in double precision.
double ce_oracle(const std::vector<std::vector<double>>& logits, std::span<const int> labels) {
  double total = 0;
  for (std::size_t r = 0; r < logits.size(); ++r) {
    const double m = *std::max_element(logits[r].begin(), logits[r].end());
    double z = 0;
    for (double l : logits[r]) z += std::exp(l - m);
    total += -(logits[r][static_cast<std::size_t>(labels[r])] - m - std::log(z));
  }
  return total / static_cast<double>(logits.size());
}

Real head_loss(MetricHead& head, const Tensor& embeddings, std::span<const int> labels) {
  Tape tape;
  return head.loss(tape, tape.constant(embeddings), labels).value()[0];
}

}  // namespace

TEST_CASE("dimension bookkeeping") {
  ModelConfig c;
  CHECK(c.post_dim() == 320);
  CHECK(c.cnn_width() == 128);
  CHECK(c.episode_dim() == 320);
  c.pooling = Pooling::kTransformer;
  CHECK(c.episode_dim() == 32);
  c.vocab_size = 50;
  EpisodeModel model(c, 1);
  model.add_market("m", ContextVocab({"a", "b", "c"}));
  Tape tape;
  PostInput p{{2, 3, 4, 5, 6}, 0, 0};
  CHECK(model.embed_post(tape, "m", p, Mode{}).cols() == 320);
  CHECK(model.embed_episode(tape, EpisodeInput{"m", {p, p}}, Mode{}).cols() == 32);
}

TEST_CASE("model config round-trips through [model]") {
  ModelConfig c = small_config(Pooling::kTransformer);
  c.dropout = Real(0.2);
  Config ini;
  model_config_to(c, ini);
  const ModelConfig back = model_config_from(ini);
  CHECK(back.filter_widths == c.filter_widths);
  CHECK(back.dropout == c.dropout);
  CHECK(back.pooling == Pooling::kTransformer);
  CHECK(back.output_dim == c.output_dim);
  CHECK(back.vocab_size == c.vocab_size);
}

TEST_CASE("text encoder") {
  EpisodeModel model(small_config(), 3);
  model.add_market("m", ContextVocab({"s"}));
  const std::vector<std::string> texts{"abcdefghij"};
  const Vocab vocab = train_char_vocab(texts, 30);
  SUBCASE("short posts are padded and stay finite") {
    const PostInput p = model.make_post_input(make_post("m", "a", 10, "1", "ab", "s"), vocab);
    CHECK(p.tokens.size() == 3);
    CHECK(p.tokens[2] == Vocab::kPadId);
    Tape tape;
    Var t = model.embed_text(tape, model.embed_tokens(tape, p.tokens), Mode{});
    for (Real v : t.value().values()) CHECK(std::isfinite(v));
  }
  SUBCASE("eval mode is deterministic and order sensitive") {
    const std::vector<int> ids{8, 9, 10, 11, 12, 13};
    std::vector<int> rev(ids.rbegin(), ids.rend());
    Tape tape;
    const Tensor a = model.embed_text(tape, model.embed_tokens(tape, ids), Mode{}).value();
    const Tensor b = model.embed_text(tape, model.embed_tokens(tape, ids), Mode{}).value();
    const Tensor c = model.embed_text(tape, model.embed_tokens(tape, rev), Mode{}).value();
    CHECK(a == b);
    CHECK_FALSE(a == c);
  }
  SUBCASE("out of range ids are an error") {
    Tape tape;
    const std::vector<int> ids{1, 2, 99};
    CHECK_THROWS(model.embed_tokens(tape, ids));
  }
  SUBCASE("truncation to max_tokens") {
    ModelConfig c = small_config();
    c.max_tokens = 4;
    EpisodeModel m2(c, 1);
    m2.add_market("m", ContextVocab({"s"}));
    CHECK(m2.make_post_input(make_post("m", "a", 10, "1", "abcdefgh", "s"), vocab).tokens.size() == 4);
  }
}

TEST_CASE("time embedding") {
  EpisodeModel model(small_config(), 4);
  CHECK(weekday_utc(1356998400) == 1);  // 2013-01-01 is a Tuesday
  Tape tape;
  std::vector<Tensor> rows;
  for (int d = 0; d < 7; ++d) rows.push_back(model.embed_time(tape, d).value());
  for (int i = 0; i < 7; ++i)
    for (int j = i + 1; j < 7; ++j) CHECK_FALSE(rows[i] == rows[j]);
  model.add_market("m", ContextVocab({"s"}));
  const std::vector<std::string> texts{"x"};
  const Vocab vocab = train_char_vocab(texts, 20);
  const auto a = model.make_post_input(make_post("m", "a", 1356998400 + 5000, "1", "x", "s"), vocab);
  const auto b =
      model.make_post_input(make_post("m", "a", 1356998400 + 7 * 86400 + 80000, "2", "x", "s"), vocab);
  CHECK(a.weekday == 1);
  CHECK(a.weekday == b.weekday);
}

TEST_CASE("context embedding") {
  const ModelConfig c = small_config();
  EpisodeModel model(c, 5);
  const Tensor init = random_tensor(3, c.context_dim, 6);
  model.add_market("m", ContextVocab({"a", "b", "c"}), &init);
  Tape tape;
  SUBCASE("pretrained rows are the init up to one global positive factor") {
    const Tensor r0 = model.embed_context(tape, "m", 0).value();
    const double factor = double(r0[0]) / init.at(0, 0);
    CHECK(factor > 0);
    for (int r = 0; r < 3; ++r) {
      const Tensor row = model.embed_context(tape, "m", r).value();
      for (std::size_t i = 0; i < c.context_dim; ++i)
        CHECK(double(row[i]) == doctest::Approx(factor * init.at(r, i)).epsilon(1e-5));
    }
    // Mean row norm of the rescaled init equals the random-init expectation.
    double norms = 0;
    for (int r = 0; r < 3; ++r) {
      double sq = 0;
      for (Real v : model.embed_context(tape, "m", r).value().values()) sq += double(v) * v;
      norms += std::sqrt(sq);
    }
    CHECK(norms / 3 == doctest::Approx(0.1 * std::sqrt(double(c.context_dim))).epsilon(1e-4));
  }
  SUBCASE("unknown subforum maps to the dedicated last row") {
    const auto& table = model.market_parameters("m");
    REQUIRE(table.size() == 1);
    const Tensor unk = model.embed_context(tape, "m", -1).value();
    CHECK(std::equal(unk.values().begin(), unk.values().end(), table[0]->value.row(3).begin()));
    CHECK(model.context_vocab("m").find("zzz") == -1);
  }
  SUBCASE("same subforum gives the same vector") {
    const Tensor first = model.embed_context(tape, "m", 1).value();
    CHECK(model.embed_context(tape, "m", 1).value() == first);
  }
  SUBCASE("wrong init shape is an error") {
    const Tensor bad = random_tensor(2, c.context_dim, 1);
    CHECK_THROWS_AS(model.add_market("n", ContextVocab({"a", "b", "c"}), &bad), ValidationError);
  }
}

TEST_CASE("post embedding concatenates text, time and context") {
  EpisodeModel model(small_config(), 7);
  model.add_market("m", ContextVocab({"a", "b"}));
  const PostInput p{{3, 4, 5, 6}, 2, 1};
  Tape tape;
  const Tensor before = model.embed_post(tape, "m", p, Mode{}).value();
  CHECK(before.cols() == 8 + 4 + 5);
  for (Parameter* q : model.shared_parameters())
    if (q->name.rfind("text/", 0) == 0) q->value.fill(0);
  const Tensor after = model.embed_post(tape, "m", p, Mode{}).value();
  for (std::size_t i = 0; i < 8; ++i) CHECK(after[i] == 0);
  for (std::size_t i = 8; i < before.size(); ++i) CHECK(after[i] == before[i]);
}

TEST_CASE("mean pooling") {
  EpisodeModel model(small_config(), 8);
  Tape tape;
  const Tensor x = random_tensor(1, 17, 9);
  CHECK(model.pool(tape, tape.constant(x), Mode{}).value() == x);
  Tensor opposite({2, 17});
  for (std::size_t i = 0; i < 17; ++i) {
    opposite.at(0, i) = x[i];
    opposite.at(1, i) = -x[i];
  }
  for (Real v : model.pool(tape, tape.constant(opposite), Mode{}).value().values()) CHECK(v == 0);
}

TEST_CASE("transformer pooling is permutation invariant in eval mode") {
  const ModelConfig c = small_config(Pooling::kTransformer);
  EpisodeModel model(c, 9);
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t L = 1 + uniform_index(rng, 6);
    const Tensor x = random_tensor(L, c.post_dim(), 20 + trial);
    std::vector<std::size_t> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor y({L, c.post_dim()});
    for (std::size_t r = 0; r < L; ++r)
      std::copy(x.row(perm[r]).begin(), x.row(perm[r]).end(), y.row(r).begin());
    Tape tape;
    const Tensor a = model.pool(tape, tape.constant(x), Mode{}).value();
    const Tensor b = model.pool(tape, tape.constant(y), Mode{}).value();
    REQUIRE(a.cols() == c.output_dim);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
  }
}

TEST_CASE("softmax head") {
  const std::vector<int> label0{0};
  SUBCASE("zero weights give ln |U|") {
    MetricHead head("t", HeadConfig{}, 5, 4, 1);
    head.weight().value.fill(0);
    CHECK(head_loss(head, random_tensor(1, 4, 2), label0) == doctest::Approx(std::log(5.0)));
  }
  SUBCASE("logits (1, 0) with label 0") {
    MetricHead head("t", HeadConfig{}, 2, 3, 1);
    head.weight().value = Tensor::matrix(2, 3, {1, 0, 0, 0, 0, 0});
    const Real loss = head_loss(head, Tensor::matrix(1, 3, {1, 0, 0}), label0);
    CHECK(loss == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 1))));
    CHECK(loss == doctest::Approx(0.3133).epsilon(1e-4));
  }
  SUBCASE("label out of range is an error") {
    MetricHead head("t", HeadConfig{}, 2, 3, 1);
    const std::vector<int> bad{2};
    CHECK_THROWS(head_loss(head, random_tensor(1, 3, 1), bad));
  }
  SUBCASE("logits use the unnormalized embedding") {
    MetricHead head("t", HeadConfig{}, 3, 4, 2);
    const Tensor e = random_tensor(2, 4, 3);
    const std::vector<int> labels{2, 0};
    std::vector<std::vector<double>> logits(2, std::vector<double>(3));
    for (int r = 0; r < 2; ++r)
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 4; ++i) logits[r][j] += double(e.at(r, i)) * head.weight().value.at(j, i);
    CHECK(head_loss(head, e, labels) == doctest::Approx(ce_oracle(logits, labels)).epsilon(1e-5));
  }
}

TEST_CASE("margin heads reduce to softmax over cosines") {
  Rng rng(12);
  for (int batch = 0; batch < 100; ++batch) {
    const std::size_t classes = 2 + uniform_index(rng, 5), dim = 2 + uniform_index(rng, 6),
                      n = 1 + uniform_index(rng, 6);
    HeadConfig cf;
    cf.kind = LossKind::kCosFace;
    cf.cf_margin = 0;
    cf.cf_scale = 1;
    HeadConfig af = cf;
    af.kind = LossKind::kArcFace;
    af.af_margin = 0;
    af.af_scale = 1;
    MetricHead hc("t", cf, classes, dim, static_cast<std::uint64_t>(batch));
    MetricHead ha("t", af, classes, dim, static_cast<std::uint64_t>(batch));
    const Tensor e = random_tensor(n, dim, 100 + static_cast<std::uint64_t>(batch));
    std::vector<int> labels;
    for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<int>(uniform_index(rng, classes)));
    std::vector<std::vector<double>> logits(n, std::vector<double>(classes));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < classes; ++j) logits[r][j] = cosine(e.row(r), hc.weight().value.row(j));
    const double oracle = ce_oracle(logits, labels);
    const Real lc = head_loss(hc, e, labels);
    CHECK(std::abs(lc - oracle) <= 1e-6);
    CHECK(std::abs(head_loss(ha, e, labels) - lc) <= 1e-6);
  }
}

TEST_CASE("CosFace closed form with a unit cosine") {
  HeadConfig cf;
  cf.kind = LossKind::kCosFace;
  MetricHead head("t", cf, 2, 2, 1);
  head.weight().value = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const std::vector<int> label0{0};
  const double expected = -std::log(std::exp(64 * 0.65) / (std::exp(64 * 0.65) + 1));
  const Real loss = head_loss(head, Tensor::matrix(1, 2, {3, 0}), label0);
  CHECK(std::abs(loss - expected) < 1e-12);
  CHECK(std::abs(loss) < 1e-12);
}

TEST_CASE("margins and scale on the target logit") {
  Tape tape;
  const std::vector<int> labels{1};
  Var cos = tape.constant(Tensor::matrix(1, 2, {Real(0.3), Real(0.6)}));
  const Tensor cf = nn::margin_logits(cos, labels, LossKind::kCosFace, Real(0.35), 64).value();
  CHECK(cf[0] == doctest::Approx(64 * 0.3));
  CHECK(cf[1] == doctest::Approx(64 * (0.6 - 0.35)));
  const Tensor af = nn::margin_logits(cos, labels, LossKind::kArcFace, Real(0.49916), 64).value();
  CHECK(af[1] == doctest::Approx(64 * std::cos(std::acos(0.6) + 0.49916)).epsilon(1e-5));
  // theta + m beyond pi falls back to the linear margin.
  Var neg = tape.constant(Tensor::matrix(1, 2, {0, Real(-0.95)}));
  const Tensor fb = nn::margin_logits(neg, labels, LossKind::kArcFace, Real(0.49916), 1).value();
  CHECK(fb[1] == doctest::Approx(-0.95 - 0.49916 * std::sin(0.49916)).epsilon(1e-5));
}

TEST_CASE("zero-norm embedding is an error for cosine heads") {
  HeadConfig cf;
  cf.kind = LossKind::kCosFace;
  MetricHead head("t", cf, 2, 3, 1);
  const std::vector<int> label0{0};
  CHECK_THROWS(head_loss(head, Tensor({1, 3}), label0));
}

TEST_CASE("multi-similarity") {
  const Real alpha = 2, beta = 50, lambda = Real(0.5), eps = Real(0.1);
  const std::vector<int> labels{0, 0, 1};
  auto ms = [&](const Tensor& s) {
    Tape tape;
    return double(nn::multi_similarity(tape.constant(s), labels, alpha, beta, lambda, eps).value()[0]);
  };
  SUBCASE("nothing mined gives zero") {
    CHECK(ms(Tensor::matrix(3, 3, {1, Real(0.9), Real(-0.5), Real(0.9), 1, Real(-0.5), Real(-0.5),
                                   Real(-0.5), 1})) == 0);
  }
  SUBCASE("a positive at S = lambda contributes (1/alpha) ln 2") {
    // Anchors 0 and 1 each mine the positive (0.5) and the negative (0.45);
    // anchor 2 has no positive.
    const Real sn = Real(0.45);
    const double expected = std::log(2.0) / alpha + std::log1p(std::exp(beta * (sn - lambda))) / beta;
    CHECK(ms(Tensor::matrix(3, 3, {1, lambda, sn, lambda, 1, sn, sn, sn, 1})) ==
          doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("head loss is invariant to embedding scale") {
    HeadConfig h;
    h.kind = LossKind::kMultiSimilarity;
    MetricHead head("t", h, 3, 5, 1);
    CHECK(head.parameters().empty());
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor e = random_tensor(8, 5, 200 + trial);
      std::vector<int> l;
      for (int i = 0; i < 8; ++i) l.push_back(static_cast<int>(uniform_index(rng, 3)));
      const Real a = head_loss(head, e, l);
      for (Real& v : e.values()) v *= Real(7.3);
      CHECK(head_loss(head, e, l) == doctest::Approx(a).epsilon(1e-5));
    }
  }
}

TEST_CASE("trained CF/AF heads point their label row at the class") {
  for (LossKind kind : {LossKind::kCosFace, LossKind::kArcFace}) {
    HeadConfig h;
    h.kind = kind;
    const std::size_t classes = 4, dim = 6, per_class = 3;
    MetricHead head("t", h, classes, dim, 3);
    Parameter emb("emb", random_tensor(classes * per_class, dim, 4));
    std::vector<int> labels;
    for (std::size_t i = 0; i < classes * per_class; ++i) labels.push_back(static_cast<int>(i % classes));
    AdamState adam;
    std::vector<Parameter*> params{&emb};
    for (Parameter* p : head.parameters()) params.push_back(p);
    for (int step = 0; step < 400; ++step) {
      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      tape.backward(head.loss(tape, tape.param(emb), labels));
      adam.step(params, 1e-2);
    }
    for (std::size_t i = 0; i < classes * per_class; ++i) {
      std::size_t best = 0;
      double best_cos = -2;
      for (std::size_t j = 0; j < classes; ++j) {
        const double c = cosine(emb.value.row(i), head.weight().value.row(j));
        if (c > best_cos) {
          best_cos = c;
          best = j;
        }
      }
      CHECK(best == static_cast<std::size_t>(labels[i]));
    }
  }
}

TEST_CASE("save and load reproduce embeddings") {
  TempDir dir("model");
  for (Pooling pooling : {Pooling::kMean, Pooling::kTransformer}) {
    EpisodeModel model(small_config(pooling), 11);
    model.add_market("a", ContextVocab({"x", "y"}));
    model.add_market("b", ContextVocab({"z"}));
    Rng rng(14);
    std::vector<EpisodeInput> eps;
    for (int i = 0; i < 3; ++i)
      eps.push_back({i % 2 ? "a" : "b", {random_post(rng, 30, 1), random_post(rng, 30, 1)}});
    model.save(dir.path());
    EpisodeModel back = EpisodeModel::load(dir.path());
    CHECK(back.markets() == model.markets());
    CHECK(back.context_vocab("a").subforums == model.context_vocab("a").subforums);
    CHECK(back.embed_eval(eps) == model.embed_eval(eps));
  }
  std::filesystem::remove(dir / "contexts.json");
  CHECK_THROWS_AS(EpisodeModel::load(dir.path()), ValidationError);
}
