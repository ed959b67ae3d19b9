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

#include "epistyle/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>

#include <gsl/gsl_integration.h>

namespace epistyle {
namespace {

bool same_owner(const RetrievalIndex& index, std::size_t i, std::size_t j) {
  return index.author(i) == index.author(j) && index.market(i) == index.market(j);
}

// (cos_a, -a) > (cos_b, -b): higher cosine first, lower index on ties.
bool ranks_before(double cos_a, std::size_t a, double cos_b, std::size_t b) {
  return cos_a > cos_b || (cos_a == cos_b && a < b);
}

}  // namespace

RetrievalIndex::RetrievalIndex(Tensor embeddings, std::vector<std::string> markets,
                               std::vector<std::string> authors, std::vector<std::string> ids)
    : embeddings_(std::move(embeddings)),
      markets_(std::move(markets)),
      authors_(std::move(authors)),
      ids_(std::move(ids)) {
  const std::size_t n = authors_.size();
  if (embeddings_.rows() != n || markets_.size() != n) {
    throw ValidationError("retrieval index: " + std::to_string(embeddings_.rows()) +
                          " embeddings for " + std::to_string(n) + " authors and " +
                          std::to_string(markets_.size()) + " markets");
  }
  if (ids_.empty()) {
    for (std::size_t i = 0; i < n; ++i) ids_.push_back(std::to_string(i));
  } else if (ids_.size() != n) {
    throw ValidationError("retrieval index: id count mismatch");
  }
  const std::size_t d = embeddings_.cols();
  unit_.assign(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (std::size_t k = 0; k < d; ++k) norm += double(embeddings_.at(i, k)) * embeddings_.at(i, k);
    norm = std::sqrt(norm);
    if (!(norm > 0) || !std::isfinite(norm)) {
      throw ValidationError("retrieval index: embedding " + ids_[i] + " has zero or non-finite norm");
    }
    for (std::size_t k = 0; k < d; ++k) unit_[i][k] = embeddings_.at(i, k) / norm;
  }
}

double RetrievalIndex::cosine(std::size_t i, std::size_t j) const {
  const auto& a = unit_[i];
  const auto& b = unit_[j];
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

std::vector<std::size_t> RetrievalIndex::eligible_queries() const {
  std::map<std::pair<std::string, std::string>, std::size_t> count;
  for (std::size_t i = 0; i < size(); ++i) ++count[{markets_[i], authors_[i]}];
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i) {
    if (count[{markets_[i], authors_[i]}] >= 2) out.push_back(i);
  }
  return out;
}

std::size_t RetrievalIndex::first_hit_rank(std::size_t q) const {
  std::vector<double> cos(size());
  std::size_t best = size();
  for (std::size_t j = 0; j < size(); ++j) {
    if (j == q) continue;
    cos[j] = cosine(q, j);
    if (same_owner(*this, q, j) && (best == size() || ranks_before(cos[j], j, cos[best], best))) {
      best = j;
    }
  }
  if (best == size()) return 0;
  std::size_t rank = 1;
  for (std::size_t j = 0; j < size(); ++j) {
    if (j != q && ranks_before(cos[j], j, cos[best], best)) ++rank;
  }
  return rank;
}

std::vector<std::size_t> RetrievalIndex::ranked(
    std::size_t q, const std::function<bool(std::size_t)>& keep) const {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t j = 0; j < size(); ++j) {
    if (j != q && keep(j)) scored.emplace_back(cosine(q, j), j);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return ranks_before(a.first, a.second, b.first, b.second);
  });
  std::vector<std::size_t> out;
  out.reserve(scored.size());
  for (const auto& [c, j] : scored) out.push_back(j);
  return out;
}

double mrr_from_ranks(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw ValidationError("MRR over zero queries is undefined");
  double s = 0;
  for (std::size_t r : ranks) s += 1.0 / static_cast<double>(r);
  return s / static_cast<double>(ranks.size());
}

double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw ValidationError("recall over zero queries is undefined");
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r <= k; });
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double random_reciprocal_rank(std::size_t n, std::size_t m) {
  if (m == 0 || m > n) throw ValidationError("random rank needs 1 <= m <= n");
  // P(first hit at r): P(1) = m/n, P(r+1)/P(r) = (n-r-m+1)/(n-r).
  double p = static_cast<double>(m) / static_cast<double>(n);
  double e = 0;
  for (std::size_t r = 1; r <= n - m + 1; ++r) {
    e += p / static_cast<double>(r);
    if (r < n) p *= static_cast<double>(n - r - m + 1) / static_cast<double>(n - r);
  }
  return e;
}

double random_mrr_baseline(const RetrievalIndex& index, std::span<const std::size_t> queries) {
  std::map<std::pair<std::string, std::string>, std::size_t> count;
  for (std::size_t i = 0; i < index.size(); ++i) ++count[{index.market(i), index.author(i)}];
  double s = 0;
  std::size_t used = 0;
  for (std::size_t q : queries) {
    const std::size_t m = count[{index.market(q), index.author(q)}] - 1;
    if (m == 0) continue;
    s += random_reciprocal_rank(index.size() - 1, m);
    ++used;
  }
  if (used == 0) throw ValidationError("no eligible queries for the random baseline");
  return s / static_cast<double>(used);
}

MetricsReport evaluate_retrieval(const RetrievalIndex& index, std::size_t kappa,
                                 std::uint64_t seed, std::span<const std::size_t> ks,
                                 std::span<const std::size_t> candidates) {
  if (kappa == 0) throw ValidationError("kappa must be positive");
  std::vector<std::size_t> pool;
  if (candidates.empty()) {
    for (std::size_t i = 0; i < index.size(); ++i) pool.push_back(i);
  } else {
    pool.assign(candidates.begin(), candidates.end());
  }
  const auto eligible_all = index.eligible_queries();
  const std::set<std::size_t> eligible_set(eligible_all.begin(), eligible_all.end());
  std::vector<std::size_t> eligible;
  for (std::size_t q : pool) {
    if (eligible_set.count(q)) eligible.push_back(q);
  }
  MetricsReport report;
  report.excluded = pool.size() - eligible.size();
  report.kappa = kappa;
  report.seed = seed;
  if (eligible.empty()) {
    throw ValidationError("no query has another episode by the same author");
  }
  if (kappa > eligible.size()) {
    warn("kappa " + std::to_string(kappa) + " exceeds the " + std::to_string(eligible.size()) +
         " eligible queries; using all of them");
  }
  const std::size_t take = std::min(kappa, eligible.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < take; ++i) {
    std::swap(eligible[i], eligible[i + uniform_index(rng, eligible.size() - i)]);
  }
  eligible.resize(take);
  std::sort(eligible.begin(), eligible.end());

  std::vector<std::size_t> ranks;
  ranks.reserve(take);
  for (std::size_t q : eligible) ranks.push_back(index.first_hit_rank(q));
  report.queries = take;
  report.mrr = mrr_from_ranks(ranks);
  for (std::size_t k : ks) report.recall[k] = recall_from_ranks(ranks, k);
  report.random_mrr = random_mrr_baseline(index, eligible);
  return report;
}

SeenNovelReport seen_novel_report(const RetrievalIndex& index,
                                  const std::set<std::string>& train_authors, std::size_t kappa,
                                  std::uint64_t seed) {
  std::vector<std::size_t> seen, novel;
  for (std::size_t i = 0; i < index.size(); ++i) {
    (train_authors.count(index.market(i) + "\t" + index.author(i)) ? seen : novel).push_back(i);
  }
  SeenNovelReport out;
  const auto eligible = index.eligible_queries();
  auto has_eligible = [&](const std::vector<std::size_t>& group) {
    return std::any_of(group.begin(), group.end(), [&](std::size_t q) {
      return std::binary_search(eligible.begin(), eligible.end(), q);
    });
  };
  if (has_eligible(seen)) out.seen = evaluate_retrieval(index, kappa, seed, kDefaultRecallKs, seen);
  if (has_eligible(novel)) {
    out.novel = evaluate_retrieval(index, kappa, seed, kDefaultRecallKs, novel);
  }
  return out;
}

double wmw_paired(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("paired samples differ in length");
  if (a.size() < 5) throw ValidationError("paired test needs at least 5 pairs");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw ValidationError("non-finite sample");
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  }
  const std::size_t n = d.size();
  if (n == 0) return 1.0;

  // Doubled midranks of |d| keep tied ranks integral.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t x, std::size_t y) { return std::abs(d[x]) < std::abs(d[y]); });
  std::vector<std::size_t> rank2(n);
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const std::size_t t = j - i + 1;
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = i + j + 2;  // 2 * mean(i+1..j+1)
    tie_term += static_cast<double>(t * t * t - t);
    i = j + 1;
  }
  std::size_t w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) w2 += rank2[i];
  }

  double p;
  if (n <= 12) {
    const std::size_t max_sum = n * (n + 1);
    std::vector<double> count(max_sum + 1, 0.0);
    count[0] = 1;
    for (std::size_t r : rank2) {
      for (std::size_t s = max_sum + 1; s-- > r;) count[s] += count[s - r];
    }
    const double total = std::ldexp(1.0, static_cast<int>(n));
    double lower = 0, upper = 0;
    for (std::size_t s = 0; s <= max_sum; ++s) {
      if (s <= w2) lower += count[s];
      if (s >= w2) upper += count[s];
    }
    p = 2.0 * std::min(lower, upper) / total;
  } else {
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1) / 4;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24 - tie_term / 48;
    const double z = std::max(0.0, std::abs(static_cast<double>(w2) / 2 - mean) - 0.5) /
                     std::sqrt(var);
    p = std::erfc(z / std::sqrt(2.0));
  }
  return std::min(1.0, p);
}

double si_score(std::span<const std::vector<double>> embeddings, bool normalize) {
  if (embeddings.size() < 2) throw ValidationError("SI needs at least two episodes");
  std::vector<std::vector<double>> rows(embeddings.begin(), embeddings.end());
  if (normalize) {
    for (auto& r : rows) {
      double norm = 0;
      for (double v : r) norm += v * v;
      norm = std::sqrt(norm);
      if (!(norm > 0)) throw ValidationError("SI: zero embedding cannot be normalized");
      for (double& v : r) v /= norm;
    }
  }
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) {
        const double diff = rows[i][k] - rows[j][k];
        s += diff * diff;
      }
      total += std::sqrt(s);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

double si_score(const RetrievalIndex& index, const std::string& market, const std::string& author,
                bool normalize) {
  std::vector<std::vector<double>> rows;
  const Tensor& e = index.embeddings();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index.market(i) == market && index.author(i) == author) {
      rows.emplace_back(e.row(i).begin(), e.row(i).end());
    }
  }
  return si_score(rows, normalize);
}

SybilCandidate topk_sybil(const RetrievalIndex& index, const std::string& market,
                          const std::string& user, std::size_t k) {
  if (k == 0) throw ValidationError("k must be positive");
  std::vector<std::size_t> own;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index.market(i) == market && index.author(i) == user) own.push_back(i);
  }
  if (own.empty()) throw ValidationError("user " + market + ":" + user + " has no episodes");
  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, double>> votes;
  for (std::size_t q : own) {
    const auto ranked =
        index.ranked(q, [&](std::size_t j) { return index.market(j) != market; });
    if (ranked.empty()) throw ValidationError("no episodes from other markets");
    for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
      auto& [count, sim] = votes[{index.market(ranked[r]), index.author(ranked[r])}];
      ++count;
      sim += index.cosine(q, ranked[r]);
    }
  }
  SybilCandidate best;
  for (const auto& [owner, v] : votes) {
    const double mean = v.second / static_cast<double>(v.first);
    // Map order makes the first of equal (count, mean) the smallest name.
    if (v.first > best.support || (v.first == best.support && mean > best.mean_similarity)) {
      best = {owner.first, owner.second, v.first, mean};
    }
  }
  return best;
}

IgResult integrated_gradients(const IgFunction& fn, std::span<const Tensor> inputs,
                              std::span<const Tensor> baselines, std::size_t steps) {
  if (steps == 0) throw ValidationError("integrated gradients needs at least one node");
  if (inputs.size() != baselines.size()) throw ValidationError("one baseline per input required");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].shape() != baselines[i].shape()) {
      throw ValidationError("baseline shape " + shape_string(baselines[i].shape()) +
                            " differs from input " + shape_string(inputs[i].shape()));
    }
  }
  auto evaluate = [&](double alpha, std::vector<std::vector<double>>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor x(inputs[i].shape());
      for (std::size_t k = 0; k < x.size(); ++k) {
        x[k] = static_cast<Real>(baselines[i][k] + alpha * (double(inputs[i][k]) - baselines[i][k]));
      }
      vars.push_back(grads ? tape.input(std::move(x)) : tape.constant(std::move(x)));
    }
    Var out = fn(tape, vars);
    if (out.value().size() != 1) throw ValidationError("attribution target must be a scalar");
    const double value = out.value()[0];
    if (!std::isfinite(value)) throw Error("attribution target is not finite");
    if (grads) {
      tape.backward(out);
      for (std::size_t i = 0; i < vars.size(); ++i) {
        const Tensor& g = tape.grad(vars[i]);
        for (std::size_t k = 0; k < g.size(); ++k) {
          if (!std::isfinite(g[k])) throw Error("non-finite gradient in integrated gradients");
          (*grads)[i][k] = g[k];
        }
      }
    }
    return value;
  };

  std::vector<std::vector<double>> acc, g;
  for (const Tensor& x : inputs) {
    acc.emplace_back(x.size(), 0.0);
    g.emplace_back(x.size(), 0.0);
  }
  std::unique_ptr<gsl_integration_glfixed_table, decltype(&gsl_integration_glfixed_table_free)>
      table(gsl_integration_glfixed_table_alloc(steps), &gsl_integration_glfixed_table_free);
  if (!table) throw Error("cannot allocate quadrature table");
  for (std::size_t node = 0; node < steps; ++node) {
    double alpha = 0, weight = 0;
    gsl_integration_glfixed_point(0.0, 1.0, node, &alpha, &weight, table.get());
    evaluate(alpha, &g);
    for (std::size_t i = 0; i < acc.size(); ++i) {
      for (std::size_t k = 0; k < acc[i].size(); ++k) acc[i][k] += weight * g[i][k];
    }
  }

  IgResult result;
  result.f_input = evaluate(1.0, nullptr);
  result.f_baseline = evaluate(0.0, nullptr);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor attr(inputs[i].shape());
    for (std::size_t k = 0; k < attr.size(); ++k) {
      const double a = (double(inputs[i][k]) - baselines[i][k]) * acc[i][k];
      attr[k] = static_cast<Real>(a);
      result.total += a;
    }
    result.attributions.push_back(std::move(attr));
  }
  const double delta = result.f_input - result.f_baseline;
  result.completeness_error = std::abs(result.total - delta) / std::max(std::abs(delta), 1e-12);
  return result;
}

EpisodeAttribution attribute_episode(EpisodeModel& model, const EpisodeInput& episode,
                                     std::span<const Real> target, std::size_t steps,
                                     AttributionTarget kind, Real scale) {
  if (target.size() != model.config().episode_dim()) {
    throw ValidationError("attribution target has dimension " + std::to_string(target.size()) +
                          ", expected " + std::to_string(model.config().episode_dim()));
  }
  std::vector<Tensor> inputs, baselines;
  {
    Tape tape;
    for (const PostInput& p : episode.posts) {
      inputs.push_back(model.embed_tokens(tape, p.tokens).value());
      const std::vector<int> pads(p.tokens.size(), Vocab::kPadId);
      baselines.push_back(model.embed_tokens(tape, pads).value());
    }
  }
  Tensor t({1, target.size()});
  std::copy(target.begin(), target.end(), t.values().begin());
  const IgFunction fn = [&](Tape& tape, std::span<const Var> tokens) {
    Var e = model.embed_episode(tape, episode, Mode{}, tokens);
    if (kind == AttributionTarget::kDot) return nn::matmul_nt(e, tape.constant(t));
    return nn::scale(nn::matmul_nt(nn::l2_normalize(e), nn::l2_normalize(tape.constant(t))),
                     scale);
  };
  EpisodeAttribution out;
  out.ig = integrated_gradients(fn, inputs, baselines, steps);
  for (const Tensor& a : out.ig.attributions) {
    auto& scores = out.token_scores.emplace_back(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (Real v : a.row(r)) scores[r] += v;
    }
  }
  return out;
}

RetrievalIndex embed_episodes(EpisodeModel& model, const Vocab& vocab, std::span<const Post> posts,
                              std::size_t length) {
  const auto episodes = assemble_episodes(posts, length, 1, EpisodeMode::kFixed);
  if (episodes.empty()) throw ValidationError("no complete episodes to embed");
  std::vector<EpisodeInput> inputs;
  std::vector<std::string> markets, authors, ids;
  std::map<std::pair<std::string, std::string>, std::size_t> counter;
  for (const Episode& e : episodes) {
    inputs.push_back(model.make_episode_input(e, posts, vocab));
    markets.push_back(e.market);
    authors.push_back(e.author);
    ids.push_back(e.market + "/" + e.author + "/" + std::to_string(counter[{e.market, e.author}]++));
  }
  return RetrievalIndex(model.embed_eval(inputs), std::move(markets), std::move(authors),
                        std::move(ids));
}

void write_embeddings_tsv(const std::filesystem::path& path, const RetrievalIndex& index) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  const Tensor& e = index.embeddings();
  out << "episode_id\tmarket\tauthor";
  for (std::size_t k = 0; k < e.cols(); ++k) out << "\tdim" << k;
  out << '\n';
  out.precision(9);
  for (std::size_t i = 0; i < index.size(); ++i) {
    out << index.id(i) << '\t' << index.market(i) << '\t' << index.author(i);
    for (Real v : e.row(i)) out << '\t' << v;
    out << '\n';
  }
}

}  // namespace epistyle
