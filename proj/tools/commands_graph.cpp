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


// build-graph, walk, graph-embed.

#include <iostream>
#include <map>
#include <memory>
#include <set>

#include "epistyle/corpus.hpp"
#include "epistyle/hetgraph.hpp"
#include "stage.hpp"

namespace epistyle::cli {

namespace {

std::map<std::string, std::vector<Post>> posts_by_market(const fs::path& path) {
  require_path(path);
  LoadResult r = load_posts(path);
  if (r.posts.empty()) throw ValidationError("no usable posts in " + path.string());
  std::map<std::string, std::vector<Post>> out;
  for (Post& p : r.posts) out[p.market].push_back(std::move(p));
  return out;
}

/// Markets with a `<market><suffix>` file in `dir`, or just `only`.
std::vector<std::string> markets_in(const fs::path& dir, const std::string& suffix,
                                    const std::vector<std::string>& only) {
  require_path(dir);
  if (!only.empty()) {
    for (const std::string& m : only) require_path(dir / (m + suffix));
    return only;
  }
  std::set<std::string> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      found.insert(name.substr(0, name.size() - suffix.size()));
    }
  }
  if (found.empty()) throw ValidationError("missing upstream artifact: no *" + suffix + " in " +
                                           dir.string());
  return {found.begin(), found.end()};
}

void add_build_graph(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string posts;
    std::vector<std::string> markets;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("build-graph", "Per-market heterogeneous graph from posts");
  cmd.sections = {"graph"};
  add_common_options(cmd);
  cmd.app->add_option("--posts", o->posts, "Training-split posts")->required();
  cmd.app->add_option("--market", o->markets, "Restrict to these markets")->delimiter(',');
  cmd.run = [o](Command& c) {
    Stage stage(c, "build-graph");
    stage.input(o->posts);
    auto by_market = posts_by_market(o->posts);
    std::vector<std::string> markets = o->markets;
    if (markets.empty()) {
      for (const auto& [m, _] : by_market) markets.push_back(m);
    }
    for (const std::string& m : markets) {
      if (!by_market.count(m)) throw ValidationError("no posts for market '" + m + "'");
      stage.output(m + ".graph.json");
    }
    run_stage(stage, [&] {
      for (const std::string& m : markets) {
        const HetGraph g = build_graph(by_market[m]);
        g.save(stage.out(m + ".graph.json"));
        std::cerr << "build-graph: " << m << ": " << g.num_nodes() << " nodes, " << g.num_edges()
                  << " edges\n";
      }
    });
  };
}

void add_walk(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string graph_dir;
    std::vector<std::string> markets;
    std::vector<std::string> schemes;
    WalkOptions walk;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("walk", "Meta-path guided random walks");
  cmd.sections = {"graph"};
  add_common_options(cmd);
  cmd.app->add_option("--graph-dir", o->graph_dir, "build-graph output")->required();
  cmd.app->add_option("--market", o->markets)->delimiter(',');
  cmd.app->add_option("--schemes", o->schemes, "Meta-paths such as UTSTU (default: all seven)")
      ->delimiter(',');
  cmd.app->add_option("--walks-per-user", o->walk.walks_per_user)->capture_default_str();
  cmd.app->add_option("--walk-length", o->walk.walk_length)->capture_default_str();
  cmd.run = [o](Command& c) {
    o->walk.seed = c.common.seed;
    std::vector<MetapathScheme> schemes;
    for (const std::string& s : o->schemes) schemes.push_back(MetapathScheme::parse(s));
    if (schemes.empty()) schemes = default_schemes();
    Stage stage(c, "walk");
    const auto markets = markets_in(o->graph_dir, ".graph.json", o->markets);
    for (const std::string& m : markets) {
      stage.input(fs::path(o->graph_dir) / (m + ".graph.json"));
      stage.output(m + ".walks.txt");
    }
    run_stage(stage, [&] {
      for (const std::string& m : markets) {
        const HetGraph g = HetGraph::load(fs::path(o->graph_dir) / (m + ".graph.json"));
        const auto walks = sample_walks(g, schemes, o->walk);
        write_walks(stage.out(m + ".walks.txt"), g, walks);
        std::cerr << "walk: " << m << ": " << walks.size() << " walks\n";
      }
    });
  };
}

void add_graph_embed(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string walk_dir;
    std::string graph_dir;
    std::vector<std::string> markets;
    SkipGramOptions sg;
    bool untyped = false;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("graph-embed",
                               "Skip-gram node embeddings and subforum context rows");
  cmd.sections = {"graph"};
  add_common_options(cmd);
  cmd.app->add_option("--walk-dir", o->walk_dir, "walk output")->required();
  cmd.app->add_option("--graph-dir", o->graph_dir, "build-graph output")->required();
  cmd.app->add_option("--market", o->markets)->delimiter(',');
  cmd.app->add_option("--dim", o->sg.dim)->capture_default_str();
  cmd.app->add_option("--window", o->sg.window)->capture_default_str();
  cmd.app->add_option("--negatives", o->sg.negatives)->capture_default_str();
  cmd.app->add_option("--epochs", o->sg.epochs)->capture_default_str();
  cmd.app->add_option("--lr", o->sg.lr)->capture_default_str();
  cmd.app->add_flag("--untyped-negatives", o->untyped, "Draw negatives from all node types");
  cmd.run = [o](Command& c) {
    o->sg.seed = c.common.seed;
    o->sg.typed_negatives = !o->untyped;
    Stage stage(c, "graph-embed");
    const auto markets = markets_in(o->walk_dir, ".walks.txt", o->markets);
    for (const std::string& m : markets) {
      stage.input(fs::path(o->walk_dir) / (m + ".walks.txt"));
      stage.input(fs::path(o->graph_dir) / (m + ".graph.json"));
      stage.output(m + ".emb.tsv");
      stage.output(m + ".context.tsv");
    }
    run_stage(stage, [&] {
      for (const std::string& m : markets) {
        const auto walks = read_walks(fs::path(o->walk_dir) / (m + ".walks.txt"));
        const HetGraph g = HetGraph::load(fs::path(o->graph_dir) / (m + ".graph.json"));
        const SkipGramResult r = train_skipgram(walks, o->sg);
        r.embeddings.save(stage.out(m + ".emb.tsv"));
        // Context rows keyed by subforum name, in graph order.
        std::vector<std::string> subforums;
        for (HetGraph::NodeId id : g.nodes_of(NodeType::kSubforum)) subforums.push_back(g.name(id));
        NodeEmbeddings ctx;
        ctx.labels = subforums;
        for (std::size_t i = 0; i < subforums.size(); ++i) ctx.row_of[subforums[i]] = i;
        ctx.vectors = export_context_init(r.embeddings, g, subforums, o->sg.dim);
        ctx.options = o->sg;
        ctx.save(stage.out(m + ".context.tsv"));
        std::cerr << "graph-embed: " << m << ": " << r.embeddings.labels.size()
                  << " nodes, final loss " << (r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back())
                  << '\n';
      }
    });
  };
}

}  // namespace

void register_graph_commands(CLI::App& app, std::deque<Command>& commands) {
  add_build_graph(app, commands);
  add_walk(app, commands);
  add_graph_embed(app, commands);
}

}  // namespace epistyle::cli
