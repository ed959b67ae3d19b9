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

#include "epistyle/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "epistyle/checkpoint.hpp"

namespace epistyle {
namespace {

using nlohmann::json;

double normal01(Rng& rng) {
  // Box-Muller on our own uniform draws keeps initialization identical
  // across standard libraries.
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Parameter normal_param(std::string name, std::size_t rows, std::size_t cols, double stddev,
                       Rng& rng) {
  Tensor t({rows, cols});
  for (Real& v : t.values()) v = static_cast<Real>(stddev * normal01(rng));
  return Parameter(std::move(name), std::move(t));
}

// Glorot uniform.
Parameter xavier_param(std::string name, std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t({rows, cols});
  for (Real& v : t.values()) v = static_cast<Real>((2.0 * uniform01(rng) - 1.0) * limit);
  return Parameter(std::move(name), std::move(t));
}

Parameter const_param(std::string name, std::size_t cols, Real value) {
  return Parameter(std::move(name), Tensor({1, cols}, value));
}

constexpr double kEmbeddingStd = 0.1;

}  // namespace

std::string_view to_string(Pooling p) { return p == Pooling::kMean ? "mean" : "transformer"; }

Pooling parse_pooling(std::string_view text) {
  if (text == "mean") return Pooling::kMean;
  if (text == "transformer") return Pooling::kTransformer;
  throw ValidationError("unknown pooling '" + std::string(text) + "' (mean|transformer)");
}

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::kSoftmax: return "sm";
    case LossKind::kCosFace: return "cf";
    case LossKind::kArcFace: return "af";
    case LossKind::kMultiSimilarity: return "ms";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view text) {
  if (text == "sm") return LossKind::kSoftmax;
  if (text == "cf") return LossKind::kCosFace;
  if (text == "af") return LossKind::kArcFace;
  if (text == "ms") return LossKind::kMultiSimilarity;
  throw ValidationError("unknown loss '" + std::string(text) + "' (sm|cf|af|ms)");
}

std::size_t ModelConfig::max_filter_width() const {
  return filter_widths.empty() ? 1 : *std::max_element(filter_widths.begin(), filter_widths.end());
}

std::size_t ModelConfig::episode_dim() const {
  return pooling == Pooling::kMean ? post_dim() : output_dim;
}

void ModelConfig::validate() const {
  if (vocab_size <= Vocab::kNumSpecials) throw ValidationError("model vocab size too small");
  for (std::size_t v : {token_dim, text_dim, time_dim, context_dim, filters_per_width, max_tokens,
                        transformer_layers, transformer_heads, transformer_dim, transformer_ff,
                        output_dim}) {
    if (v == 0) throw ValidationError("model dimensions must be positive");
  }
  if (filter_widths.empty() ||
      std::any_of(filter_widths.begin(), filter_widths.end(), [](auto w) { return w == 0; })) {
    throw ValidationError("filter widths must be positive");
  }
  if (!(dropout >= 0 && dropout < 1)) throw ValidationError("dropout must lie in [0, 1)");
  if (transformer_dim % transformer_heads != 0) {
    throw ValidationError("transformer dim must be divisible by the head count");
  }
  if (max_tokens < max_filter_width()) throw ValidationError("max_tokens below filter width");
}

ModelConfig model_config_from(const Config& config, ModelConfig base) {
  const std::string s = "model";
  ModelConfig c = std::move(base);
  c.vocab_size = config.get_size(s, "vocab_size", c.vocab_size);
  c.token_dim = config.get_size(s, "token_dim", c.token_dim);
  c.text_dim = config.get_size(s, "text_dim", c.text_dim);
  c.time_dim = config.get_size(s, "time_dim", c.time_dim);
  c.context_dim = config.get_size(s, "context_dim", c.context_dim);
  c.filter_widths = config.get_sizes(s, "filter_widths", c.filter_widths);
  c.filters_per_width = config.get_size(s, "filters_per_width", c.filters_per_width);
  c.dropout = static_cast<Real>(config.get_double(s, "dropout", c.dropout));
  c.max_tokens = config.get_size(s, "max_tokens", c.max_tokens);
  c.pooling = parse_pooling(config.get_string(s, "pooling", std::string(to_string(c.pooling))));
  c.transformer_layers = config.get_size(s, "transformer_layers", c.transformer_layers);
  c.transformer_heads = config.get_size(s, "transformer_heads", c.transformer_heads);
  c.transformer_dim = config.get_size(s, "transformer_dim", c.transformer_dim);
  c.transformer_ff = config.get_size(s, "transformer_ff", c.transformer_ff);
  c.output_dim = config.get_size(s, "output_dim", c.output_dim);
  return c;
}

void model_config_to(const ModelConfig& c, Config& config) {
  const std::string s = "model";
  auto put = [&](const char* key, std::size_t v) { config.set(s, key, {std::to_string(v)}); };
  put("vocab_size", c.vocab_size);
  put("token_dim", c.token_dim);
  put("text_dim", c.text_dim);
  put("time_dim", c.time_dim);
  put("context_dim", c.context_dim);
  std::vector<std::string> widths;
  for (std::size_t w : c.filter_widths) widths.push_back(std::to_string(w));
  config.set(s, "filter_widths", widths);
  put("filters_per_width", c.filters_per_width);
  config.set(s, "dropout", {format_double(c.dropout)});
  put("max_tokens", c.max_tokens);
  config.set(s, "pooling", {std::string(to_string(c.pooling))});
  put("transformer_layers", c.transformer_layers);
  put("transformer_heads", c.transformer_heads);
  put("transformer_dim", c.transformer_dim);
  put("transformer_ff", c.transformer_ff);
  put("output_dim", c.output_dim);
}

ContextVocab::ContextVocab(std::vector<std::string> names) : subforums(std::move(names)) {
  for (std::size_t i = 0; i < subforums.size(); ++i) {
    if (!index.emplace(subforums[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate subforum '" + subforums[i] + "'");
    }
  }
}

int ContextVocab::find(const std::string& subforum) const {
  auto it = index.find(subforum);
  return it == index.end() ? -1 : it->second;
}

EpisodeModel::EpisodeModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
  config_.validate();
  const ModelConfig& c = config_;
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  token_table_ = normal_param("text/tokens", c.vocab_size, c.token_dim, kEmbeddingStd, rng);
  for (std::size_t j = 0; j < c.token_dim; ++j) token_table_.value.at(Vocab::kPadId, j) = 0;
  for (std::size_t w : c.filter_widths) {
    const std::string base = "text/conv" + std::to_string(w);
    conv_w_.push_back(xavier_param(base + "/weight", w * c.token_dim, c.filters_per_width, rng));
    conv_b_.push_back(const_param(base + "/bias", c.filters_per_width, 0));
  }
  text_fc_w_ = xavier_param("text/fc/weight", c.cnn_width(), c.text_dim, rng);
  text_fc_b_ = const_param("text/fc/bias", c.text_dim, 0);
  time_table_ = normal_param("time/weekday", 7, c.time_dim, kEmbeddingStd, rng);
  if (c.pooling == Pooling::kTransformer) {
    const std::size_t d = c.transformer_dim;
    in_proj_w_ = xavier_param("pool/in/weight", c.post_dim(), d, rng);
    in_proj_b_ = const_param("pool/in/bias", d, 0);
    for (std::size_t l = 0; l < c.transformer_layers; ++l) {
      const std::string p = "pool/layer" + std::to_string(l) + "/";
      TransformerLayer layer{
          const_param(p + "ln1/gamma", d, 1), const_param(p + "ln1/beta", d, 0),
          xavier_param(p + "attn/wq", d, d, rng), const_param(p + "attn/bq", d, 0),
          xavier_param(p + "attn/wk", d, d, rng), const_param(p + "attn/bk", d, 0),
          xavier_param(p + "attn/wv", d, d, rng), const_param(p + "attn/bv", d, 0),
          xavier_param(p + "attn/wo", d, d, rng), const_param(p + "attn/bo", d, 0),
          const_param(p + "ln2/gamma", d, 1), const_param(p + "ln2/beta", d, 0),
          xavier_param(p + "ff/w1", d, c.transformer_ff, rng),
          const_param(p + "ff/b1", c.transformer_ff, 0),
          xavier_param(p + "ff/w2", c.transformer_ff, d, rng), const_param(p + "ff/b2", d, 0)};
      layers_.push_back(std::move(layer));
    }
    final_gamma_ = const_param("pool/final_ln/gamma", d, 1);
    final_beta_ = const_param("pool/final_ln/beta", d, 0);
    out_proj_w_ = xavier_param("pool/out/weight", d, c.output_dim, rng);
    out_proj_b_ = const_param("pool/out/bias", c.output_dim, 0);
  }
}

void EpisodeModel::add_market(const std::string& market, ContextVocab vocab, const Tensor* init) {
  if (markets_.count(market)) throw ValidationError("market '" + market + "' already registered");
  const std::size_t rows = vocab.subforums.size() + 1;
  Rng rng(mix_seed(seed_, fnv1a64(market)));
  auto ctx = std::make_unique<MarketContext>(MarketContext{
      std::move(vocab),
      normal_param("context/" + market, rows, config_.context_dim, kEmbeddingStd, rng)});
  if (init) {
    if (init->rows() != rows - 1 || init->cols() != config_.context_dim) {
      throw ValidationError("context init for '" + market + "' has shape " +
                            shape_string(init->shape()) + ", expected " +
                            std::to_string(rows - 1) + " x " +
                            std::to_string(config_.context_dim));
    }
    // Skip-gram vectors come out an order of magnitude larger than the other
    // component embeddings and would swamp the text features under cosine
    // retrieval. One global factor brings the mean nonzero row norm to that of
    // the random init; relative geometry is untouched.
    const std::size_t d = config_.context_dim;
    double norm_sum = 0;
    std::size_t nonzero = 0;
    for (std::size_t r = 0; r + 1 < rows; ++r) {
      double sq = 0;
      for (Real v : init->row(r)) sq += double(v) * double(v);
      if (sq > 0) {
        norm_sum += std::sqrt(sq);
        ++nonzero;
      }
    }
    const double target = kEmbeddingStd * std::sqrt(double(d));
    const double scale = nonzero ? target / (norm_sum / double(nonzero)) : 1.0;
    auto dst = ctx->table.value.values();
    const auto src = init->values();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<Real>(double(src[i]) * scale);
  }
  markets_.emplace(market, std::move(ctx));
}

std::vector<std::string> EpisodeModel::markets() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : markets_) out.push_back(name);
  return out;
}

const ContextVocab& EpisodeModel::context_vocab(const std::string& market) const {
  auto it = markets_.find(market);
  if (it == markets_.end()) throw ValidationError("unknown market '" + market + "'");
  return it->second->vocab;
}

PostInput EpisodeModel::make_post_input(const Post& post, const Vocab& vocab) const {
  PostInput in;
  in.tokens = vocab.encode(post.body);
  if (in.tokens.size() > config_.max_tokens) in.tokens.resize(config_.max_tokens);
  if (in.tokens.size() < config_.max_filter_width()) {
    in.tokens.resize(config_.max_filter_width(), Vocab::kPadId);
  }
  in.weekday = weekday_utc(post.timestamp);
  in.subforum = context_vocab(post.market).find(post.subforum);
  return in;
}

EpisodeInput EpisodeModel::make_episode_input(const Episode& episode, std::span<const Post> posts,
                                              const Vocab& vocab) const {
  EpisodeInput in;
  in.market = episode.market;
  for (std::size_t i : episode.posts) in.posts.push_back(make_post_input(posts[i], vocab));
  return in;
}

Var EpisodeModel::embed_tokens(Tape& tape, std::span<const int> ids) {
  return nn::embedding_lookup(tape.param(token_table_), ids, Vocab::kPadId);
}

Var EpisodeModel::embed_text(Tape& tape, Var token_embeddings, const Mode& mode) {
  std::vector<Var> pooled;
  pooled.reserve(conv_w_.size());
  for (std::size_t i = 0; i < conv_w_.size(); ++i) {
    Var conv = nn::sliding_window_conv(token_embeddings, tape.param(conv_w_[i]),
                                       tape.param(conv_b_[i]), config_.filter_widths[i]);
    pooled.push_back(nn::max_over_time(conv));
  }
  Var features = nn::dropout(nn::concat(pooled, 1), config_.dropout, mode);
  return nn::linear(features, tape.param(text_fc_w_), tape.param(text_fc_b_));
}

Var EpisodeModel::embed_time(Tape& tape, int weekday) {
  const int ids[] = {weekday};
  return nn::embedding_lookup(tape.param(time_table_), ids);
}

Var EpisodeModel::embed_context(Tape& tape, const std::string& market, int subforum) {
  auto it = markets_.find(market);
  if (it == markets_.end()) throw ValidationError("unknown market '" + market + "'");
  Parameter& table = it->second->table;
  const int unk = static_cast<int>(table.value.rows()) - 1;
  const int ids[] = {subforum < 0 || subforum >= unk ? unk : subforum};
  return nn::embedding_lookup(tape.param(table), ids);
}

Var EpisodeModel::embed_post(Tape& tape, const std::string& market, const PostInput& post,
                             const Mode& mode, const Var* token_embeddings) {
  Var tokens = token_embeddings ? *token_embeddings : embed_tokens(tape, post.tokens);
  const Var parts[] = {embed_text(tape, tokens, mode), embed_time(tape, post.weekday),
                       embed_context(tape, market, post.subforum)};
  return nn::concat(parts, 1);
}

Var EpisodeModel::pool(Tape& tape, Var x, const Mode& mode) {
  if (config_.pooling == Pooling::kMean) return nn::mean(x, 0);
  Var h = nn::linear(x, tape.param(in_proj_w_), tape.param(in_proj_b_));
  for (TransformerLayer& l : layers_) {
    Var a = nn::layer_norm(h, tape.param(l.ln1_gamma), tape.param(l.ln1_beta));
    const AttentionWeights w{tape.param(l.wq), tape.param(l.bq), tape.param(l.wk),
                             tape.param(l.bk), tape.param(l.wv), tape.param(l.bv),
                             tape.param(l.wo), tape.param(l.bo)};
    h = nn::add(h, nn::dropout(nn::multihead_attention(a, w, config_.transformer_heads),
                               config_.dropout, mode));
    Var f = nn::layer_norm(h, tape.param(l.ln2_gamma), tape.param(l.ln2_beta));
    f = nn::relu(nn::linear(f, tape.param(l.ff1_w), tape.param(l.ff1_b)));
    f = nn::linear(f, tape.param(l.ff2_w), tape.param(l.ff2_b));
    h = nn::add(h, nn::dropout(f, config_.dropout, mode));
  }
  h = nn::layer_norm(h, tape.param(final_gamma_), tape.param(final_beta_));
  return nn::linear(nn::mean(h, 0), tape.param(out_proj_w_), tape.param(out_proj_b_));
}

Var EpisodeModel::embed_episode(Tape& tape, const EpisodeInput& episode, const Mode& mode,
                                std::span<const Var> token_embeddings) {
  if (episode.posts.empty()) throw ValidationError("episode without posts");
  if (!token_embeddings.empty() && token_embeddings.size() != episode.posts.size()) {
    throw ValidationError("one token-embedding input per post required");
  }
  std::vector<Var> rows;
  rows.reserve(episode.posts.size());
  for (std::size_t i = 0; i < episode.posts.size(); ++i) {
    rows.push_back(embed_post(tape, episode.market, episode.posts[i], mode,
                              token_embeddings.empty() ? nullptr : &token_embeddings[i]));
  }
  return pool(tape, nn::concat(rows, 0), mode);
}

Var EpisodeModel::embed_batch(Tape& tape, std::span<const EpisodeInput* const> episodes,
                              const Mode& mode) {
  std::vector<Var> rows;
  rows.reserve(episodes.size());
  for (const EpisodeInput* e : episodes) rows.push_back(embed_episode(tape, *e, mode));
  return nn::concat(rows, 0);
}

Tensor EpisodeModel::embed_eval(std::span<const EpisodeInput> episodes) {
  const std::size_t d = config_.episode_dim();
  Tensor out({episodes.size(), d});
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    Tape tape;
    Var e = embed_episode(tape, episodes[i], Mode{});
    std::copy_n(e.value().data(), d, out.row(i).data());
  }
  return out;
}

std::vector<Parameter*> EpisodeModel::shared_parameters() {
  std::vector<Parameter*> out{&token_table_};
  for (std::size_t i = 0; i < conv_w_.size(); ++i) {
    out.push_back(&conv_w_[i]);
    out.push_back(&conv_b_[i]);
  }
  out.insert(out.end(), {&text_fc_w_, &text_fc_b_, &time_table_});
  if (config_.pooling == Pooling::kTransformer) {
    out.insert(out.end(), {&in_proj_w_, &in_proj_b_});
    for (TransformerLayer& l : layers_) {
      out.insert(out.end(), {&l.ln1_gamma, &l.ln1_beta, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv,
                             &l.bv, &l.wo, &l.bo, &l.ln2_gamma, &l.ln2_beta, &l.ff1_w,
                             &l.ff1_b, &l.ff2_w, &l.ff2_b});
    }
    out.insert(out.end(), {&final_gamma_, &final_beta_, &out_proj_w_, &out_proj_b_});
  }
  return out;
}

std::vector<Parameter*> EpisodeModel::market_parameters(const std::string& market) {
  auto it = markets_.find(market);
  if (it == markets_.end()) throw ValidationError("unknown market '" + market + "'");
  return {&it->second->table};
}

std::vector<Parameter*> EpisodeModel::parameters() {
  auto out = shared_parameters();
  for (auto& [_, ctx] : markets_) out.push_back(&ctx->table);
  return out;
}

void EpisodeModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  Config ini;
  model_config_to(config_, ini);
  ini.set("model", "seed", {std::to_string(seed_)});
  ini.save(dir / "model.ini");

  json contexts = json::object();
  for (const auto& [name, ctx] : markets_) contexts[name] = ctx->vocab.subforums;
  std::ofstream out(dir / "contexts.json");
  if (!out) throw Error("cannot write " + (dir / "contexts.json").string());
  out << contexts.dump(2) << "\n";

  auto* self = const_cast<EpisodeModel*>(this);
  const auto params = self->parameters();
  std::vector<const Parameter*> cparams(params.begin(), params.end());
  save_checkpoint(dir / "model.ckpt", cparams);
}

EpisodeModel EpisodeModel::load(const std::filesystem::path& dir) {
  for (const char* name : {"model.ini", "contexts.json", "model.ckpt"}) {
    if (!std::filesystem::exists(dir / name)) {
      throw ValidationError("missing " + (dir / name).string());
    }
  }
  const Config ini = Config::load(dir / "model.ini");
  const ModelConfig c = model_config_from(ini);
  const auto seed = static_cast<std::uint64_t>(ini.get_size("model", "seed", 0));
  std::ifstream in(dir / "contexts.json");
  json contexts;
  try {
    in >> contexts;
  } catch (const json::exception& e) {
    throw ValidationError("malformed contexts.json: " + std::string(e.what()));
  }
  EpisodeModel model(c, seed);
  for (const auto& [name, subs] : contexts.items()) {
    model.add_market(name, ContextVocab(subs.get<std::vector<std::string>>()));
  }
  restore_parameters(load_checkpoint(dir / "model.ckpt"), model.parameters());
  return model;
}

// ---------------------------------------------------------------------------
// Heads

MetricHead::MetricHead(std::string name, HeadConfig config, std::size_t classes, std::size_t dim,
                       std::uint64_t seed)
    : config_(config), classes_(classes) {
  if (classes == 0) throw ValidationError("head '" + name + "' has no classes");
  if (config_.kind != LossKind::kMultiSimilarity) {
    Rng rng(mix_seed(seed, fnv1a64(name)));
    weight_ = xavier_param("head/" + name, classes, dim, rng);
  }
}

std::vector<Parameter*> MetricHead::parameters() {
  if (config_.kind == LossKind::kMultiSimilarity) return {};
  return {&weight_};
}

Var MetricHead::loss(Tape& tape, Var embeddings, std::span<const int> labels) {
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes_) {
      throw ValidationError("label " + std::to_string(y) + " outside head of " +
                            std::to_string(classes_) + " classes");
    }
  }
  const HeadConfig& c = config_;
  switch (c.kind) {
    case LossKind::kSoftmax:
      return nn::cross_entropy(nn::matmul_nt(embeddings, tape.param(weight_)), labels);
    case LossKind::kCosFace:
    case LossKind::kArcFace: {
      Var cos = nn::matmul_nt(nn::l2_normalize(embeddings), nn::l2_normalize(tape.param(weight_)));
      const bool cf = c.kind == LossKind::kCosFace;
      return nn::cross_entropy(nn::margin_logits(cos, labels, c.kind, cf ? c.cf_margin : c.af_margin,
                                                 cf ? c.cf_scale : c.af_scale),
                               labels);
    }
    case LossKind::kMultiSimilarity: {
      Var n = nn::l2_normalize(embeddings);
      return nn::multi_similarity(nn::matmul_nt(n, n), labels, c.ms_alpha, c.ms_beta,
                                  c.ms_lambda, c.ms_epsilon);
    }
  }
  throw Error("unreachable loss kind");
}

namespace nn {

Var margin_logits(Var cosines, std::span<const int> labels, LossKind kind, Real margin,
                  Real scale) {
  if (kind != LossKind::kCosFace && kind != LossKind::kArcFace) {
    throw ValidationError("margin_logits supports cf and af only");
  }
  const Tensor& C = cosines.value();
  const std::size_t n = C.rows(), k = C.cols();
  if (labels.size() != n) throw ValidationError("margin_logits: label count mismatch");
  Tensor out({n, k});
  // d(target logit)/d(cos) per row.
  std::vector<double> dtarget(n, scale);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) out.at(r, j) = scale * C.at(r, j);
    const auto y = static_cast<std::size_t>(labels[r]);
    const double c = C.at(r, y);
    double t;
    if (kind == LossKind::kCosFace) {
      t = c - margin;
    } else {
      const double cc = std::clamp(c, -1.0 + 1e-7, 1.0 - 1e-7);
      const double theta = std::acos(cc);
      if (theta + margin <= std::numbers::pi) {
        t = std::cos(theta + margin);
        dtarget[r] = scale * std::sin(theta + margin) / std::sin(theta);
      } else {
        t = c - margin * std::sin(static_cast<double>(margin));
      }
    }
    out.at(r, y) = static_cast<Real>(scale * t);
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return cosines.tape->record(std::move(out), {cosines},
                              [cosines, saved, dtarget, scale](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gc = t.grad(cosines);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      const auto y = static_cast<std::size_t>(saved[r]);
      for (std::size_t j = 0; j < g.cols(); ++j) {
        gc.at(r, j) += static_cast<Real>((j == y ? dtarget[r] : double(scale)) * g.at(r, j));
      }
    }
  });
}

Var multi_similarity(Var similarities, std::span<const int> labels, Real alpha, Real beta,
                     Real lambda, Real epsilon) {
  const Tensor& S = similarities.value();
  const std::size_t n = S.rows();
  if (S.cols() != n || labels.size() != n) {
    throw ValidationError("multi_similarity: expected square similarities matching labels, got " +
                          shape_string(S.shape()));
  }
  Tensor dS({n, n});  // gradient of the summed per-anchor losses
  double total = 0;
  std::size_t anchors = 0;
  for (std::size_t a = 0; a < n; ++a) {
    double min_pos = INFINITY, max_neg = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        min_pos = std::min(min_pos, double(S.at(a, j)));
      } else {
        max_neg = std::max(max_neg, double(S.at(a, j)));
      }
    }
    if (!std::isfinite(min_pos) || !std::isfinite(max_neg)) continue;
    double pos_sum = 0, neg_sum = 0;
    std::vector<std::pair<std::size_t, double>> pos, neg;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const double s = S.at(a, j);
      if (labels[j] == labels[a]) {
        if (s - epsilon < max_neg) {
          const double e = std::exp(-alpha * (s - lambda));
          pos.emplace_back(j, e);
          pos_sum += e;
        }
      } else if (s + epsilon > min_pos) {
        const double e = std::exp(beta * (s - lambda));
        neg.emplace_back(j, e);
        neg_sum += e;
      }
    }
    if (pos.empty() && neg.empty()) continue;
    ++anchors;
    total += std::log1p(pos_sum) / alpha + std::log1p(neg_sum) / beta;
    for (auto [j, e] : pos) dS.at(a, j) += static_cast<Real>(-e / (1.0 + pos_sum));
    for (auto [j, e] : neg) dS.at(a, j) += static_cast<Real>(e / (1.0 + neg_sum));
  }
  const double inv = anchors ? 1.0 / static_cast<double>(anchors) : 0.0;
  return similarities.tape->record(
      Tensor::scalar(static_cast<Real>(total * inv)), {similarities},
      [similarities, dS, inv](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0] * inv;
        Tensor& gs = t.grad(similarities);
        for (std::size_t i = 0; i < dS.size(); ++i) gs[i] += static_cast<Real>(g * dS[i]);
      });
}

}  // namespace nn
}  // namespace epistyle
