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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "epistyle/autodiff.hpp"
#include "epistyle/model.hpp"

namespace epistyle {

/// Episode embeddings with their owners. Cosines use unit-normalized double
/// copies of the rows.
class RetrievalIndex {
 public:
  RetrievalIndex(Tensor embeddings, std::vector<std::string> markets,
                 std::vector<std::string> authors, std::vector<std::string> ids = {});

  std::size_t size() const { return authors_.size(); }
  const Tensor& embeddings() const { return embeddings_; }
  const std::string& market(std::size_t i) const { return markets_[i]; }
  const std::string& author(std::size_t i) const { return authors_[i]; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  double cosine(std::size_t i, std::size_t j) const;

  /// Entries whose author has at least one other entry.
  std::vector<std::size_t> eligible_queries() const;
  /// 1-based rank of the first same-author entry among all others, ordered
  /// by cosine descending with ties broken by lower index. 0 if none.
  std::size_t first_hit_rank(std::size_t query) const;

  /// Entries ordered by cosine to `query` (descending, ties by index),
  /// restricted to `keep`.
  std::vector<std::size_t> ranked(std::size_t query,
                                  const std::function<bool(std::size_t)>& keep) const;

 private:
  Tensor embeddings_;
  std::vector<std::vector<double>> unit_;
  std::vector<std::string> markets_, authors_, ids_;
};

struct MetricsReport {
  double mrr = 0;
  std::map<std::size_t, double> recall;  // k -> R@k
  std::size_t queries = 0;
  std::size_t excluded = 0;  // candidate queries without a same-author entry
  std::size_t kappa = 0;
  std::uint64_t seed = 0;
  double random_mrr = 0;  // expected MRR of a uniformly random ranking
};

inline constexpr std::array<std::size_t, 3> kDefaultRecallKs{1, 5, 10};

double mrr_from_ranks(std::span<const std::size_t> ranks);
double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k);

/// Samples up to kappa queries (without replacement) among `candidates`
/// (all entries if empty) and reports MRR and R@k. Throws when no candidate
/// has a same-author entry.
MetricsReport evaluate_retrieval(const RetrievalIndex& index, std::size_t kappa,
                                 std::uint64_t seed,
                                 std::span<const std::size_t> ks = kDefaultRecallKs,
                                 std::span<const std::size_t> candidates = {});

/// Expected reciprocal rank of the first of m relevant items among n
/// uniformly shuffled ones.
double random_reciprocal_rank(std::size_t n, std::size_t m);
/// Mean of random_reciprocal_rank over the eligible queries in `queries`.
double random_mrr_baseline(const RetrievalIndex& index, std::span<const std::size_t> queries);

struct SeenNovelReport {
  std::optional<MetricsReport> seen;
  std::optional<MetricsReport> novel;
};

/// Splits queries by whether their author appears in `train_authors`
/// (keys "market\tauthor"); an empty group is omitted.
SeenNovelReport seen_novel_report(const RetrievalIndex& index,
                                  const std::set<std::string>& train_authors, std::size_t kappa,
                                  std::uint64_t seed);

/// Two-sided Wilcoxon signed-rank p-value for paired samples (n >= 5).
/// Exact null distribution when at most 12 differences are nonzero,
/// otherwise the normal approximation with tie and continuity correction.
double wmw_paired(std::span<const double> a, std::span<const double> b);

/// Mean pairwise Euclidean distance among rows; rows optionally unit
/// normalized first. Requires at least two rows.
double si_score(std::span<const std::vector<double>> embeddings, bool normalize = false);
/// si_score over the index entries of one author on one market.
double si_score(const RetrievalIndex& index, const std::string& market, const std::string& author,
                bool normalize = false);

struct SybilCandidate {
  std::string market;
  std::string user;
  std::size_t support = 0;
  double mean_similarity = 0;
};

/// Pools the k nearest other-market episodes of each of the user's
/// episodes and returns the most frequent owner (ties: higher mean
/// similarity, then name).
SybilCandidate topk_sybil(const RetrievalIndex& index, const std::string& market,
                          const std::string& user, std::size_t k);

struct IgResult {
  std::vector<Tensor> attributions;  // same shapes as the inputs
  double f_input = 0;
  double f_baseline = 0;
  double total = 0;  // sum of all attributions
  /// |total - (f_input - f_baseline)| / max(|f_input - f_baseline|, 1e-12)
  double completeness_error = 0;
};

using IgFunction = std::function<Var(Tape&, std::span<const Var>)>;

/// Integrated gradients of a scalar function along the straight path from
/// `baselines` to `inputs`, integrated with `steps`-node Gauss-Legendre
/// quadrature on [0, 1].
IgResult integrated_gradients(const IgFunction& fn, std::span<const Tensor> inputs,
                              std::span<const Tensor> baselines, std::size_t steps = 50);

struct EpisodeAttribution {
  // Per post, one score per token: attribution summed over embedding dims.
  std::vector<std::vector<double>> token_scores;
  IgResult ig;
};

/// Scalar explained by attribution: scale * cos(e, target), or the plain
/// dot product e . target (a softmax-head logit when target is a W row).
enum class AttributionTarget { kCosine, kDot };

/// Attributes a scalar of the episode embedding and `target` (an episode-dim
/// vector, e.g. the author's centroid or a head row) to the tokens, with the
/// all-[PAD] episode as baseline.
EpisodeAttribution attribute_episode(EpisodeModel& model, const EpisodeInput& episode,
                                     std::span<const Real> target, std::size_t steps = 50,
                                     AttributionTarget kind = AttributionTarget::kCosine,
                                     Real scale = 1);

/// Fixed episodes of `posts` embedded in eval mode. Ids are
/// "market/author/k"; authors with a single episode are kept as
/// distractors.
RetrievalIndex embed_episodes(EpisodeModel& model, const Vocab& vocab, std::span<const Post> posts,
                              std::size_t length);

/// TSV `episode_id market author dim0..`.
void write_embeddings_tsv(const std::filesystem::path& path, const RetrievalIndex& index);

}  // namespace epistyle
