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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epistyle/corpus.hpp"
#include "epistyle/tensor.hpp"

namespace epistyle {

enum class NodeType : std::uint8_t { kUser = 0, kSubforum = 1, kThread = 2, kPost = 3 };
inline constexpr std::size_t kNodeTypeCount = 4;

char type_letter(NodeType t);
NodeType type_from_letter(char c);

/// Forum graph with user, subforum, thread and post nodes. Edges:
/// user-thread (user started the thread), user-post (user wrote the post),
/// thread-post (thread contains the post), subforum-thread.
class HetGraph {
 public:
  using NodeId = std::size_t;

  /// Adds a node if absent; returns its id.
  NodeId add_node(NodeType type, const std::string& name);
  /// Adds an undirected edge once; throws for pairs not allowed by the schema.
  void add_edge(NodeId a, NodeId b);

  std::optional<NodeId> find(NodeType type, const std::string& name) const;

  std::size_t num_nodes() const { return types_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t count(NodeType type) const { return by_type_[static_cast<std::size_t>(type)].size(); }
  const std::vector<NodeId>& nodes_of(NodeType type) const {
    return by_type_[static_cast<std::size_t>(type)];
  }

  NodeType type(NodeId id) const { return types_[id]; }
  const std::string& name(NodeId id) const { return names_[id]; }
  /// Type letter plus index within the type, e.g. "U12".
  std::string label(NodeId id) const;
  std::optional<NodeId> from_label(std::string_view label) const;

  /// Neighbors of `id` whose type is `t`, in insertion order.
  const std::vector<NodeId>& neighbors(NodeId id, NodeType t) const {
    return adjacency_[id][static_cast<std::size_t>(t)];
  }
  bool has_edge(NodeId a, NodeId b) const;

  void save(const std::filesystem::path& path) const;
  static HetGraph load(const std::filesystem::path& path);

 private:
  std::vector<NodeType> types_;
  std::vector<std::string> names_;
  std::vector<std::size_t> local_index_;
  std::array<std::vector<NodeId>, kNodeTypeCount> by_type_;
  std::map<std::pair<NodeType, std::string>, NodeId> lookup_;
  std::vector<std::array<std::vector<NodeId>, kNodeTypeCount>> adjacency_;
  std::vector<std::pair<NodeId, NodeId>> edges_;  // insertion order
};

/// True when the schema admits an edge between the two types.
bool edge_allowed(NodeType a, NodeType b);

/// One graph per market, built from that market's (training) posts.
HetGraph build_graph(std::span<const Post> posts);

/// A type sequence that starts and ends with a user node.
struct MetapathScheme {
  std::vector<NodeType> types;

  static MetapathScheme parse(std::string_view text);
  std::string name() const;
};

/// UPTSTPU, UTSTPU, UPTSTU, UTSTU, UPTPU, UPTU, UTPU.
const std::vector<MetapathScheme>& default_schemes();

using Walk = std::vector<HetGraph::NodeId>;

struct WalkOptions {
  std::size_t walks_per_user = 1000;
  std::size_t walk_length = 80;
  std::uint64_t seed = 0;
};

/// Meta-path guided walks from every user node. Walks are split evenly over
/// the schemes (remainder round-robin); each scheme is cycled by reusing its
/// terminal user node; the next hop is uniform over neighbors of the
/// required type and a walk stops early when none exists. Each walk draws
/// from its own stream derived from (seed, node, walk index).
std::vector<Walk> sample_walks(const HetGraph& graph, std::span<const MetapathScheme> schemes,
                               const WalkOptions& options);

/// One walk per line, space separated node labels.
void write_walks(const std::filesystem::path& path, const HetGraph& graph,
                 std::span<const Walk> walks);
std::vector<std::vector<std::string>> read_walks(const std::filesystem::path& path);
std::vector<std::vector<std::string>> walks_to_labels(const HetGraph& graph,
                                                      std::span<const Walk> walks);

struct SkipGramOptions {
  std::size_t dim = 128;
  std::size_t window = 7;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;  // decayed linearly towards lr * 1e-4
  std::uint64_t seed = 0;
  // Draw negatives from the context node's type only.
  bool typed_negatives = true;
};

/// Node vectors keyed by node label; rows follow first appearance in walks.
struct NodeEmbeddings {
  std::vector<std::string> labels;
  std::map<std::string, std::size_t> row_of;
  Tensor vectors;
  SkipGramOptions options;

  std::optional<std::span<const Real>> find(const std::string& label) const;
  void save(const std::filesystem::path& path) const;
  static NodeEmbeddings load(const std::filesystem::path& path);
};

struct SkipGramResult {
  NodeEmbeddings embeddings;
  std::vector<double> epoch_loss;  // mean pair loss per epoch
};

/// -log s(u_c . v) - sum_n log s(-u_n . v) with s the logistic function.
double skipgram_pair_loss(std::span<const double> center, std::span<const double> context,
                          std::span<const std::vector<double>> negatives);

/// Gradients of skipgram_pair_loss w.r.t. center, context and each negative.
struct SkipGramPairGrad {
  std::vector<double> center;
  std::vector<double> context;
  std::vector<std::vector<double>> negatives;
};
SkipGramPairGrad skipgram_pair_gradients(std::span<const double> center,
                                         std::span<const double> context,
                                         std::span<const std::vector<double>> negatives);

/// Skip-gram with negative sampling over walks of node labels (first letter
/// is the node type). Single-threaded and deterministic for a given seed.
SkipGramResult train_skipgram(std::span<const std::vector<std::string>> walks,
                              const SkipGramOptions& options);

/// Subforum rows for the context table, in the given subforum order. A
/// subforum without a vector yields a zero row (with a warning).
Tensor export_context_init(const NodeEmbeddings& embeddings, const HetGraph& graph,
                           std::span<const std::string> subforums, std::size_t expected_dim);

/// Graph, walks and skip-gram on one market's posts, exported as context
/// rows for `subforums`.
Tensor pretrain_context(std::span<const Post> market_posts, std::span<const std::string> subforums,
                        std::span<const MetapathScheme> schemes, const WalkOptions& walks,
                        const SkipGramOptions& skipgram);

}  // namespace epistyle
