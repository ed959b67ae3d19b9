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
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epistyle/autodiff.hpp"
#include "epistyle/config.hpp"
#include "epistyle/corpus.hpp"
#include "epistyle/tokenize.hpp"

namespace epistyle {

enum class Pooling { kMean, kTransformer };
enum class LossKind { kSoftmax, kCosFace, kArcFace, kMultiSimilarity };

std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view text);
std::string_view to_string(LossKind k);
/// Accepts sm, cf, af, ms.
LossKind parse_loss_kind(std::string_view text);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t token_dim = 32;
  std::size_t text_dim = 128;
  std::size_t time_dim = 64;
  std::size_t context_dim = 128;
  std::vector<std::size_t> filter_widths{2, 3, 4, 5};
  std::size_t filters_per_width = 32;
  Real dropout = Real(0.1);
  std::size_t max_tokens = 512;
  Pooling pooling = Pooling::kMean;
  std::size_t transformer_layers = 4;
  std::size_t transformer_heads = 4;
  std::size_t transformer_dim = 128;
  std::size_t transformer_ff = 128;
  std::size_t output_dim = 32;

  std::size_t cnn_width() const { return filter_widths.size() * filters_per_width; }
  std::size_t max_filter_width() const;
  /// d_t + d_tau + d_c.
  std::size_t post_dim() const { return text_dim + time_dim + context_dim; }
  /// Episode embedding width: post_dim for mean pooling, output_dim otherwise.
  std::size_t episode_dim() const;
  void validate() const;
};

/// Overlays the [model] section of `config` on `base`. Keys: vocab_size,
/// token_dim, text_dim, time_dim, context_dim, filter_widths,
/// filters_per_width, dropout, max_tokens, pooling, transformer_layers,
/// transformer_heads, transformer_dim, transformer_ff, output_dim. Other keys
/// are ignored.
ModelConfig model_config_from(const Config& config, ModelConfig base = {});
/// Writes every ModelConfig field into the [model] section.
void model_config_to(const ModelConfig& model, Config& config);

/// Model-ready view of one post.
struct PostInput {
  std::vector<int> tokens;  // at least max filter width long
  int weekday = 0;          // Monday = 0
  int subforum = -1;        // row in the market's context table; -1 is unknown
};

struct EpisodeInput {
  std::string market;
  std::vector<PostInput> posts;
};

/// Per-market subforum vocabulary backing one context table.
struct ContextVocab {
  std::vector<std::string> subforums;
  std::map<std::string, int> index;

  explicit ContextVocab(std::vector<std::string> names = {});
  /// -1 when the subforum was not seen in training.
  int find(const std::string& subforum) const;
};

/// Episode embedding network. Text, time and pooling parameters are shared
/// across markets; each market owns a context table whose last row is the
/// unknown-subforum embedding.
class EpisodeModel {
 public:
  EpisodeModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// Registers a market's context table, optionally initialized from graph
  /// embeddings (one row per subforum, same order). The init is rescaled as a
  /// whole so its mean nonzero row norm matches the random init.
  void add_market(const std::string& market, ContextVocab vocab,
                  const Tensor* init = nullptr);
  bool has_market(const std::string& market) const { return markets_.count(market) > 0; }
  std::vector<std::string> markets() const;
  const ContextVocab& context_vocab(const std::string& market) const;

  PostInput make_post_input(const Post& post, const Vocab& vocab) const;
  EpisodeInput make_episode_input(const Episode& episode, std::span<const Post> posts,
                                  const Vocab& vocab) const;

  /// Token embeddings of a post (n x token_dim); the padding row is frozen.
  Var embed_tokens(Tape& tape, std::span<const int> ids);
  /// CNN text encoder over token embeddings: 1 x text_dim.
  Var embed_text(Tape& tape, Var token_embeddings, const Mode& mode);
  Var embed_time(Tape& tape, int weekday);
  Var embed_context(Tape& tape, const std::string& market, int subforum);
  /// Concatenation (text, time, context): 1 x post_dim. A non-null
  /// `token_embeddings` replaces the token lookup.
  Var embed_post(Tape& tape, const std::string& market, const PostInput& post,
                 const Mode& mode, const Var* token_embeddings = nullptr);
  Var pool(Tape& tape, Var post_embeddings, const Mode& mode);
  /// 1 x episode_dim. `token_embeddings`, when non-empty, supplies one
  /// token-embedding input per post.
  Var embed_episode(Tape& tape, const EpisodeInput& episode, const Mode& mode,
                    std::span<const Var> token_embeddings = {});
  /// Rows are episodes: B x episode_dim.
  Var embed_batch(Tape& tape, std::span<const EpisodeInput* const> episodes, const Mode& mode);

  /// Eval-mode embeddings, one row per episode.
  Tensor embed_eval(std::span<const EpisodeInput> episodes);

  std::vector<Parameter*> shared_parameters();
  std::vector<Parameter*> market_parameters(const std::string& market);
  std::vector<Parameter*> parameters();

  /// Writes `<dir>/model.ini` (config and seed), `<dir>/contexts.json`
  /// (subforums per market) and `<dir>/model.ckpt`.
  void save(const std::filesystem::path& dir) const;
  static EpisodeModel load(const std::filesystem::path& dir);

 private:
  struct TransformerLayer {
    Parameter ln1_gamma, ln1_beta, wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter ln2_gamma, ln2_beta, ff1_w, ff1_b, ff2_w, ff2_b;
  };
  struct MarketContext {
    ContextVocab vocab;
    Parameter table;
  };

  ModelConfig config_;
  std::uint64_t seed_;
  Parameter token_table_;
  std::vector<Parameter> conv_w_, conv_b_;
  Parameter text_fc_w_, text_fc_b_;
  Parameter time_table_;
  Parameter in_proj_w_, in_proj_b_;
  std::vector<TransformerLayer> layers_;
  Parameter final_gamma_, final_beta_, out_proj_w_, out_proj_b_;
  std::map<std::string, std::unique_ptr<MarketContext>> markets_;
};

/// Metric-learning hyperparameters. Angles in radians.
struct HeadConfig {
  LossKind kind = LossKind::kSoftmax;
  Real cf_margin = Real(0.35);
  Real cf_scale = Real(64);
  Real af_margin = Real(0.49916);  // 28.6 degrees
  Real af_scale = Real(64);
  Real ms_alpha = Real(2);
  Real ms_beta = Real(50);
  Real ms_lambda = Real(0.5);
  Real ms_epsilon = Real(0.1);
};

/// Task-specific head g. SM, CF and AF hold a class x dim weight matrix; MS
/// works on in-batch similarities and has no parameters.
class MetricHead {
 public:
  MetricHead(std::string name, HeadConfig config, std::size_t classes, std::size_t dim,
             std::uint64_t seed);

  const HeadConfig& config() const { return config_; }
  std::size_t classes() const { return classes_; }
  /// Scalar loss over a batch of embeddings (B x dim) and task-local labels.
  Var loss(Tape& tape, Var embeddings, std::span<const int> labels);
  std::vector<Parameter*> parameters();
  Parameter& weight() { return weight_; }

 private:
  HeadConfig config_;
  std::size_t classes_;
  Parameter weight_;
};

namespace nn {

/// Replaces the target entry of each row of cosine logits with its margin
/// form and scales everything by `scale`. CosFace: cos - m. ArcFace:
/// cos(theta + m), falling back to cos - m sin(m) when theta + m > pi.
Var margin_logits(Var cosines, std::span<const int> labels, LossKind kind, Real margin,
                  Real scale);

/// Multi-similarity loss on a similarity matrix (B x B, typically cosines).
/// A positive is mined when S_ap - eps < max_n S_an, a negative when
/// S_an + eps > min_p S_ap. Anchors lacking positives or negatives, or
/// mining nothing, are skipped; the loss is the mean over the rest (0 if
/// none).
Var multi_similarity(Var similarities, std::span<const int> labels, Real alpha, Real beta,
                     Real lambda, Real epsilon);

}  // namespace nn

}  // namespace epistyle
