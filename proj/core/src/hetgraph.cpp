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

#include "epistyle/hetgraph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "epistyle/common.hpp"

namespace epistyle {
namespace {

constexpr std::size_t idx(NodeType t) { return static_cast<std::size_t>(t); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Cumulative unigram^0.75 table over a fixed set of rows.
struct NoiseTable {
  std::vector<std::size_t> rows;
  std::vector<double> cumulative;

  std::size_t draw(Rng& rng) const {
    const double u = uniform01(rng) * cumulative.back();
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                         rows.size() - 1);
    return rows[k];
  }
};

NoiseTable make_noise(const std::vector<std::size_t>& rows, const std::vector<double>& counts) {
  NoiseTable t;
  double acc = 0.0;
  for (std::size_t r : rows) {
    acc += std::pow(counts[r], 0.75);
    t.rows.push_back(r);
    t.cumulative.push_back(acc);
  }
  return t;
}

}  // namespace

char type_letter(NodeType t) {
  switch (t) {
    case NodeType::kUser: return 'U';
    case NodeType::kSubforum: return 'S';
    case NodeType::kThread: return 'T';
    case NodeType::kPost: return 'P';
  }
  return '?';
}

NodeType type_from_letter(char c) {
  switch (c) {
    case 'U': return NodeType::kUser;
    case 'S': return NodeType::kSubforum;
    case 'T': return NodeType::kThread;
    case 'P': return NodeType::kPost;
    default: break;
  }
  throw ValidationError(std::string("unknown node type letter '") + c + "'");
}

bool edge_allowed(NodeType a, NodeType b) {
  if (a > b) std::swap(a, b);
  using enum NodeType;
  return (a == kUser && b == kThread) || (a == kUser && b == kPost) ||
         (a == kThread && b == kPost) || (a == kSubforum && b == kThread);
}

HetGraph::NodeId HetGraph::add_node(NodeType type, const std::string& name) {
  const auto key = std::make_pair(type, name);
  if (auto it = lookup_.find(key); it != lookup_.end()) return it->second;
  const NodeId id = types_.size();
  types_.push_back(type);
  names_.push_back(name);
  local_index_.push_back(by_type_[idx(type)].size());
  by_type_[idx(type)].push_back(id);
  adjacency_.emplace_back();
  lookup_.emplace(key, id);
  return id;
}

bool HetGraph::has_edge(NodeId a, NodeId b) const {
  const auto& nb = adjacency_.at(a)[idx(types_.at(b))];
  return std::find(nb.begin(), nb.end(), b) != nb.end();
}

void HetGraph::add_edge(NodeId a, NodeId b) {
  if (a >= num_nodes() || b >= num_nodes()) throw Error("edge references unknown node");
  if (!edge_allowed(types_[a], types_[b])) {
    throw ValidationError(std::string("edge type ") + type_letter(types_[a]) + "-" +
                          type_letter(types_[b]) + " not allowed");
  }
  if (has_edge(a, b)) return;
  adjacency_[a][idx(types_[b])].push_back(b);
  adjacency_[b][idx(types_[a])].push_back(a);
  edges_.emplace_back(a, b);
}

std::optional<HetGraph::NodeId> HetGraph::find(NodeType type, const std::string& name) const {
  if (auto it = lookup_.find({type, name}); it != lookup_.end()) return it->second;
  return std::nullopt;
}

std::string HetGraph::label(NodeId id) const {
  return type_letter(types_.at(id)) + std::to_string(local_index_[id]);
}

std::optional<HetGraph::NodeId> HetGraph::from_label(std::string_view label) const {
  if (label.size() < 2) return std::nullopt;
  NodeType t;
  try {
    t = type_from_letter(label[0]);
  } catch (const ValidationError&) {
    return std::nullopt;
  }
  std::size_t k = 0;
  const auto [ptr, ec] = std::from_chars(label.data() + 1, label.data() + label.size(), k);
  if (ec != std::errc{} || ptr != label.data() + label.size()) return std::nullopt;
  const auto& ids = by_type_[idx(t)];
  if (k >= ids.size()) return std::nullopt;
  return ids[k];
}

void HetGraph::save(const std::filesystem::path& path) const {
  nlohmann::json nodes = nlohmann::json::array();
  for (NodeId id = 0; id < num_nodes(); ++id) {
    nodes.push_back({std::string(1, type_letter(types_[id])), names_[id]});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [a, b] : edges_) edges.push_back({a, b});
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << nlohmann::json{{"nodes", nodes}, {"edges", edges}}.dump() << "\n";
}

HetGraph HetGraph::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed graph file " + path.string() + ": " + e.what());
  }
  HetGraph g;
  for (const auto& n : j.at("nodes")) {
    g.add_node(type_from_letter(n.at(0).get<std::string>().at(0)), n.at(1).get<std::string>());
  }
  // Edges replay in insertion order so neighbor order (and walks) survive.
  for (const auto& e : j.at("edges")) g.add_edge(e.at(0).get<NodeId>(), e.at(1).get<NodeId>());
  return g;
}

HetGraph build_graph(std::span<const Post> posts) {
  HetGraph g;
  for (const Post& p : posts) {
    const auto u = g.add_node(NodeType::kUser, p.author);
    const auto s = g.add_node(NodeType::kSubforum, p.subforum);
    const auto t = g.add_node(NodeType::kThread, p.thread_id);
    const auto q = g.add_node(NodeType::kPost, p.post_id);
    g.add_edge(s, t);
    g.add_edge(t, q);
    g.add_edge(u, q);
    if (p.is_thread_start) g.add_edge(u, t);
  }
  return g;
}

MetapathScheme MetapathScheme::parse(std::string_view text) {
  MetapathScheme s;
  for (char c : text) s.types.push_back(type_from_letter(c));
  if (s.types.size() < 3 || s.types.front() != NodeType::kUser ||
      s.types.back() != NodeType::kUser) {
    throw ValidationError("meta-path '" + std::string(text) + "' must start and end with U");
  }
  for (std::size_t i = 0; i + 1 < s.types.size(); ++i) {
    if (!edge_allowed(s.types[i], s.types[i + 1])) {
      throw ValidationError("meta-path '" + std::string(text) + "' uses a non-existent edge type");
    }
  }
  return s;
}

std::string MetapathScheme::name() const {
  std::string out;
  for (NodeType t : types) out += type_letter(t);
  return out;
}

const std::vector<MetapathScheme>& default_schemes() {
  static const std::vector<MetapathScheme> schemes = [] {
    std::vector<MetapathScheme> v;
    for (const char* s : {"UPTSTPU", "UTSTPU", "UPTSTU", "UTSTU", "UPTPU", "UPTU", "UTPU"}) {
      v.push_back(MetapathScheme::parse(s));
    }
    return v;
  }();
  return schemes;
}

std::vector<Walk> sample_walks(const HetGraph& graph, std::span<const MetapathScheme> schemes,
                               const WalkOptions& options) {
  if (graph.num_nodes() == 0) throw ValidationError("cannot sample walks on an empty graph");
  if (schemes.empty()) throw ValidationError("no meta-path schemes");
  if (options.walk_length == 0) throw ValidationError("walk length must be positive");
  const std::size_t n_schemes = schemes.size();
  std::vector<Walk> walks;
  walks.reserve(graph.count(NodeType::kUser) * options.walks_per_user);
  for (HetGraph::NodeId start : graph.nodes_of(NodeType::kUser)) {
    bool isolated = true;
    for (std::size_t t = 0; t < kNodeTypeCount; ++t) {
      if (!graph.neighbors(start, static_cast<NodeType>(t)).empty()) isolated = false;
    }
    if (isolated) warn("user node " + graph.label(start) + " is isolated; walks have length 1");
    // Walk w uses scheme w % n: an even split with the remainder spread
    // round-robin over the first schemes.
    for (std::size_t w = 0; w < options.walks_per_user; ++w) {
      const auto& types = schemes[w % n_schemes].types;
      Rng rng(mix_seed(mix_seed(options.seed, start), w));
      Walk walk{start};
      HetGraph::NodeId cur = start;
      std::size_t pos = 0;
      while (walk.size() < options.walk_length) {
        const auto& cand = graph.neighbors(cur, types[pos + 1]);
        if (cand.empty()) break;
        cur = cand[uniform_index(rng, cand.size())];
        walk.push_back(cur);
        if (++pos == types.size() - 1) pos = 0;
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

std::vector<std::vector<std::string>> walks_to_labels(const HetGraph& graph,
                                                      std::span<const Walk> walks) {
  std::vector<std::vector<std::string>> out;
  out.reserve(walks.size());
  for (const Walk& w : walks) {
    auto& row = out.emplace_back();
    row.reserve(w.size());
    for (auto id : w) row.push_back(graph.label(id));
  }
  return out;
}

void write_walks(const std::filesystem::path& path, const HetGraph& graph,
                 std::span<const Walk> walks) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const Walk& w : walks) {
    for (std::size_t i = 0; i < w.size(); ++i) out << (i ? " " : "") << graph.label(w[i]);
    out << '\n';
  }
}

std::vector<std::vector<std::string>> read_walks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::vector<std::string>> walks;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<std::string> walk;
    for (std::string tok; ss >> tok;) {
      type_from_letter(tok[0]);
      walk.push_back(std::move(tok));
    }
    if (!walk.empty()) walks.push_back(std::move(walk));
  }
  return walks;
}

std::optional<std::span<const Real>> NodeEmbeddings::find(const std::string& label) const {
  auto it = row_of.find(label);
  if (it == row_of.end()) return std::nullopt;
  return vectors.row(it->second);
}

void NodeEmbeddings::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "node";
  for (std::size_t d = 0; d < vectors.cols(); ++d) out << "\tdim" << d;
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < labels.size(); ++r) {
    out << labels[r];
    for (std::size_t d = 0; d < vectors.cols(); ++d) {
      // Shortest round-trip representation keeps load(save(x)) bitwise equal.
      auto res = std::to_chars(buf, buf + sizeof buf, vectors.at(r, d));
      out << '\t' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

NodeEmbeddings NodeEmbeddings::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty embedding file " + path.string());
  std::size_t dim = 0;
  for (char c : line) dim += c == '\t';
  if (dim == 0) throw ValidationError("embedding file has no dimensions");
  NodeEmbeddings e;
  e.options.dim = dim;
  std::vector<Real> data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string label;
    std::getline(ss, label, '\t');
    std::size_t got = 0;
    for (std::string cell; std::getline(ss, cell, '\t'); ++got) {
      Real v{};
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{} || !std::isfinite(v)) {
        throw ValidationError("bad embedding value for " + label);
      }
      data.push_back(v);
    }
    if (got != dim) throw ValidationError("embedding row " + label + " has wrong dimension");
    e.row_of.emplace(label, e.labels.size());
    e.labels.push_back(label);
  }
  e.vectors = Tensor({e.labels.size(), dim}, std::move(data));
  return e;
}

double skipgram_pair_loss(std::span<const double> center, std::span<const double> context,
                          std::span<const std::vector<double>> negatives) {
  double loss = -log_sigmoid(dot(context, center));
  for (const auto& n : negatives) loss -= log_sigmoid(-dot(n, center));
  return loss;
}

SkipGramPairGrad skipgram_pair_gradients(std::span<const double> center,
                                         std::span<const double> context,
                                         std::span<const std::vector<double>> negatives) {
  const std::size_t d = center.size();
  SkipGramPairGrad g;
  g.center.assign(d, 0.0);
  g.context.assign(d, 0.0);
  // d/dx of -log s(x) is s(x) - 1; of -log s(-x) is s(x).
  const double gp = sigmoid(dot(context, center)) - 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    g.center[i] += gp * context[i];
    g.context[i] = gp * center[i];
  }
  for (const auto& n : negatives) {
    const double gn = sigmoid(dot(n, center));
    auto& gv = g.negatives.emplace_back(d);
    for (std::size_t i = 0; i < d; ++i) {
      g.center[i] += gn * n[i];
      gv[i] = gn * center[i];
    }
  }
  return g;
}

SkipGramResult train_skipgram(std::span<const std::vector<std::string>> walks,
                              const SkipGramOptions& options) {
  if (options.dim == 0) throw ValidationError("skip-gram dim must be positive");
  if (options.window == 0) throw ValidationError("skip-gram window must be positive");
  if (walks.empty()) throw ValidationError("no walks to train on");

  SkipGramResult result;
  NodeEmbeddings& emb = result.embeddings;
  emb.options = options;
  std::vector<std::vector<std::size_t>> corpus;
  std::vector<double> counts;
  std::vector<NodeType> row_type;
  corpus.reserve(walks.size());
  for (const auto& w : walks) {
    auto& ids = corpus.emplace_back();
    ids.reserve(w.size());
    for (const auto& label : w) {
      auto [it, fresh] = emb.row_of.emplace(label, emb.labels.size());
      if (fresh) {
        emb.labels.push_back(label);
        counts.push_back(0.0);
        row_type.push_back(type_from_letter(label.at(0)));
      }
      counts[it->second] += 1.0;
      ids.push_back(it->second);
    }
  }
  const std::size_t n = emb.labels.size();
  const std::size_t d = options.dim;

  std::array<NoiseTable, kNodeTypeCount> typed;
  {
    std::array<std::vector<std::size_t>, kNodeTypeCount> rows;
    for (std::size_t r = 0; r < n; ++r) rows[idx(row_type[r])].push_back(r);
    for (std::size_t t = 0; t < kNodeTypeCount; ++t) {
      if (!rows[t].empty()) typed[t] = make_noise(rows[t], counts);
    }
  }
  std::vector<std::size_t> all(n);
  for (std::size_t r = 0; r < n; ++r) all[r] = r;
  const NoiseTable untyped = make_noise(all, counts);

  Rng rng(options.seed);
  std::vector<double> in(n * d), out(n * d, 0.0);
  for (double& v : in) v = (uniform01(rng) - 0.5) / static_cast<double>(d);

  std::size_t total_tokens = 0;
  for (const auto& w : corpus) total_tokens += w.size();
  const double total = static_cast<double>(total_tokens * options.epochs);
  double processed = 0.0;

  std::vector<double> grad_center(d);
  std::vector<std::size_t> targets;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t pairs = 0;
    for (const auto& w : corpus) {
      for (std::size_t i = 0; i < w.size(); ++i, processed += 1.0) {
        const double lr = options.lr * std::max(1e-4, 1.0 - processed / total);
        const std::size_t lo = i >= options.window ? i - options.window : 0;
        const std::size_t hi = std::min(w.size(), i + options.window + 1);
        double* v = &in[w[i] * d];
        for (std::size_t j = lo; j < hi; ++j) {
          if (j == i) continue;
          const std::size_t ctx = w[j];
          const NoiseTable& noise = options.typed_negatives ? typed[idx(row_type[ctx])] : untyped;
          targets.assign(1, ctx);
          for (std::size_t k = 0; k < options.negatives; ++k) {
            const std::size_t neg = noise.draw(rng);
            if (neg != ctx) targets.push_back(neg);
          }
          std::fill(grad_center.begin(), grad_center.end(), 0.0);
          for (std::size_t k = 0; k < targets.size(); ++k) {
            double* u = &out[targets[k] * d];
            double s = 0.0;
            for (std::size_t x = 0; x < d; ++x) s += u[x] * v[x];
            const bool positive = k == 0;
            loss_sum -= positive ? log_sigmoid(s) : log_sigmoid(-s);
            const double g = (positive ? sigmoid(s) - 1.0 : sigmoid(s)) * lr;
            for (std::size_t x = 0; x < d; ++x) {
              grad_center[x] += g * u[x];
              u[x] -= g * v[x];
            }
          }
          for (std::size_t x = 0; x < d; ++x) v[x] -= grad_center[x];
          ++pairs;
        }
      }
    }
    result.epoch_loss.push_back(pairs ? loss_sum / static_cast<double>(pairs) : 0.0);
  }

  emb.vectors = Tensor({n, d});
  for (std::size_t i = 0; i < n * d; ++i) {
    if (!std::isfinite(in[i])) throw Error("skip-gram diverged (non-finite vector)");
    emb.vectors[i] = static_cast<Real>(in[i]);
  }
  return result;
}

Tensor export_context_init(const NodeEmbeddings& embeddings, const HetGraph& graph,
                           std::span<const std::string> subforums, std::size_t expected_dim) {
  const std::size_t d = embeddings.vectors.cols();
  if (d != expected_dim) {
    throw ValidationError("graph embedding dim " + std::to_string(d) +
                          " does not match context dim " + std::to_string(expected_dim));
  }
  Tensor out({subforums.size(), d});
  for (std::size_t r = 0; r < subforums.size(); ++r) {
    const auto node = graph.find(NodeType::kSubforum, subforums[r]);
    const auto vec = node ? embeddings.find(graph.label(*node)) : std::nullopt;
    if (!vec) {
      warn("subforum '" + subforums[r] + "' has no graph embedding; using zeros");
      continue;
    }
    std::copy(vec->begin(), vec->end(), out.row(r).begin());
  }
  return out;
}

Tensor pretrain_context(std::span<const Post> market_posts, std::span<const std::string> subforums,
                        std::span<const MetapathScheme> schemes, const WalkOptions& walks,
                        const SkipGramOptions& skipgram) {
  const HetGraph graph = build_graph(market_posts);
  const auto sampled = sample_walks(graph, schemes, walks);
  const auto labels = walks_to_labels(graph, sampled);
  const SkipGramResult result = train_skipgram(labels, skipgram);
  return export_context_init(result.embeddings, graph, subforums, skipgram.dim);
}

}  // namespace epistyle
