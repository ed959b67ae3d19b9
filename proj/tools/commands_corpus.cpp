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


// synth, ingest, preprocess, split, episodes, pgp-pairs.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <regex>
#include <set>

#include "epistyle/corpus.hpp"
#include "epistyle/csv.hpp"
#include "epistyle/synth.hpp"
#include "stage.hpp"

namespace epistyle::cli {

namespace {

std::vector<Post> load_all(const fs::path& path) {
  require_path(path);
  LoadResult r = load_posts(path);
  if (r.posts.empty()) throw ValidationError("no usable posts in " + path.string());
  return std::move(r.posts);
}

void add_synth(CLI::App& app, std::deque<Command>& commands) {
  auto cfg = std::make_shared<SynthConfig>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("synth", "Generate a synthetic multi-market corpus");
  cmd.sections = {"corpus"};
  add_common_options(cmd);
  CLI::App* a = cmd.app;
  a->add_option("--markets", cfg->markets, "Market names")->delimiter(',')->capture_default_str();
  a->add_option("--authors", cfg->authors_per_market, "Authors per market")->capture_default_str();
  a->add_option("--migrants", cfg->migrants, "Authors shared by the first two markets")
      ->capture_default_str();
  a->add_option("--posts-per-author", cfg->posts_per_author)->capture_default_str();
  a->add_option("--spam-authors", cfg->spam_authors, "Per market, among --authors")
      ->capture_default_str();
  a->add_option("--novel-fraction", cfg->novel_fraction)->capture_default_str();
  a->add_option("--pool-size", cfg->pool_size)->capture_default_str();
  a->add_option("--signature-size", cfg->signature_size)->capture_default_str();
  a->add_option("--signature-weight", cfg->signature_weight)->capture_default_str();
  a->add_option("--min-words", cfg->min_words)->capture_default_str();
  a->add_option("--max-words", cfg->max_words)->capture_default_str();
  a->add_option("--migrant-drift", cfg->migrant_drift)->capture_default_str();
  a->add_option("--subforums", cfg->subforums)->capture_default_str();
  a->add_option("--communities", cfg->communities)->capture_default_str();
  a->add_option("--community-affinity", cfg->community_affinity)->capture_default_str();
  a->add_option("--thread-start-rate", cfg->thread_start_rate)->capture_default_str();
  a->add_option("--span-days", cfg->span_days)->capture_default_str();
  cmd.run = [cfg](Command& c) {
    cfg->seed = c.common.seed;
    cfg->validate();
    Stage stage(c, "synth");
    for (const std::string& m : cfg->markets) stage.output(m + ".jsonl");
    stage.output("migration_labels.csv");
    run_stage(stage, [&] {
      const SynthCorpus corpus = generate_corpus(*cfg);
      write_synth_corpus(stage.out_dir(), corpus);
      std::cerr << "synth: " << corpus.posts.size() << " posts, " << corpus.labels.size()
                << " migration labels\n";
    });
  };
}

void add_ingest(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::vector<std::string> inputs;
    std::string market;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("ingest", "Validate and merge JSONL post files into posts.jsonl");
  cmd.sections = {"corpus"};
  add_common_options(cmd);
  cmd.app->add_option("inputs", o->inputs, "JSONL post files")->required();
  cmd.app->add_option("--market", o->market, "Override the market field (single input only)");
  cmd.run = [o](Command& c) {
    if (!o->market.empty() && o->inputs.size() != 1) {
      throw ValidationError("--market needs exactly one input file");
    }
    Stage stage(c, "ingest");
    for (const std::string& in : o->inputs) stage.input(in);
    stage.output("posts.jsonl");
    run_stage(stage, [&] {
      std::vector<Post> all;
      std::size_t malformed = 0;
      for (const std::string& in : o->inputs) {
        LoadResult r = load_posts(in, o->market);
        malformed += r.malformed;
        all.insert(all.end(), r.posts.begin(), r.posts.end());
      }
      std::set<std::pair<std::string, std::string>> ids;
      for (const Post& p : all) {
        if (!ids.emplace(p.market, p.post_id).second) {
          throw ValidationError("duplicate post id " + p.market + "/" + p.post_id +
                                " across input files");
        }
      }
      // Canonical order: market, then time; ties keep file order.
      std::stable_sort(all.begin(), all.end(), [](const Post& a, const Post& b) {
        return std::tie(a.market, a.timestamp) < std::tie(b.market, b.timestamp);
      });
      if (all.empty()) throw ValidationError("no usable posts in the inputs");
      write_posts(stage.out("posts.jsonl"), all);
      std::cerr << "ingest: " << all.size() << " posts, " << malformed << " malformed lines\n";
    });
  };
}

struct MarkupOptions {
  std::vector<std::string> quote_open;
  std::vector<std::string> quote_close;
  std::vector<std::string> images;
};

std::regex compile(const std::string& pattern) {
  try {
    return std::regex(pattern, std::regex::ECMAScript | std::regex::icase);
  } catch (const std::regex_error& e) {
    throw ValidationError("bad markup pattern '" + pattern + "': " + e.what());
  }
}

/// Defaults with any configured pattern list replacing its default.
PreprocessRules make_rules(const MarkupOptions& m) {
  PreprocessRules rules = PreprocessRules::defaults();
  if (m.quote_open.size() != m.quote_close.size()) {
    throw ValidationError("quote_open and quote_close need the same number of patterns");
  }
  if (!m.quote_open.empty()) {
    rules.quotes.clear();
    for (std::size_t i = 0; i < m.quote_open.size(); ++i) {
      rules.quotes.push_back({compile(m.quote_open[i]), compile(m.quote_close[i])});
    }
  }
  if (!m.images.empty()) {
    rules.images.clear();
    for (const std::string& p : m.images) rules.images.push_back(compile(p));
  }
  return rules;
}

void add_preprocess(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string posts;
    MarkupOptions markup;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand(
      "preprocess",
      "Replace links, images, quotes and PGP blocks; per-market markup in [corpus.<market>]");
  cmd.sections = {"corpus"};
  add_common_options(cmd);
  cmd.app->add_option("--posts", o->posts, "Ingested posts.jsonl")->required();
  cmd.app->add_option("--quote-open", o->markup.quote_open, "Quote opening regexes")
      ->delimiter(',');
  cmd.app->add_option("--quote-close", o->markup.quote_close, "Matching closing regexes")
      ->delimiter(',');
  cmd.app->add_option("--image-pattern", o->markup.images, "Image markup regexes")
      ->delimiter(',');
  cmd.run = [o](Command& c) {
    Stage stage(c, "preprocess");
    stage.input(o->posts);
    stage.output("posts.jsonl");
    run_stage(stage, [&] {
      std::vector<Post> all = load_all(o->posts);
      const Config config = c.common.config.empty() ? Config{} : Config::load(c.common.config);
      const PreprocessRules global = make_rules(o->markup);
      std::map<std::string, PreprocessRules> per_market;
      for (const Post& p : all) {
        if (per_market.count(p.market)) continue;
        const std::string section = "corpus." + p.market;
        MarkupOptions m = o->markup;
        if (const auto* v = config.find(section, "quote_open")) m.quote_open = *v;
        if (const auto* v = config.find(section, "quote_close")) m.quote_close = *v;
        if (const auto* v = config.find(section, "image_pattern")) m.images = *v;
        per_market.emplace(p.market, config.section(section).empty() ? global : make_rules(m));
      }
      for (Post& p : all) p.body = preprocess_text(p.body, per_market.at(p.market));
      write_posts(stage.out("posts.jsonl"), all);
    });
  };
}

void add_split(CLI::App& app, std::deque<Command>& commands) {
  auto posts = std::make_shared<std::string>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("split", "Per-market chronological median split");
  cmd.sections = {"corpus"};
  add_common_options(cmd);
  cmd.app->add_option("--posts", *posts, "Preprocessed posts.jsonl")->required();
  cmd.run = [posts](Command& c) {
    Stage stage(c, "split");
    stage.input(*posts);
    for (const char* o : {"split.csv", "train.jsonl", "test.jsonl"}) stage.output(o);
    run_stage(stage, [&] {
      const std::vector<Post> all = load_all(*posts);
      const std::vector<SplitSpec> splits = chronological_split_by_market(all);
      write_split_manifest(stage.out("split.csv"), splits);
      const auto train = select_split(all, splits, "train");
      const auto test = select_split(all, splits, "test");
      write_posts(stage.out("train.jsonl"), train);
      write_posts(stage.out("test.jsonl"), test);
      std::cerr << "split: " << train.size() << " train, " << test.size() << " test posts\n";
    });
  };
}

void add_episodes(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string posts;
    std::size_t length = 5;
    std::size_t min_episodes = 2;
    std::string mode = "fixed";
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("episodes", "Assemble episodes and write episodes.csv");
  cmd.sections = {"corpus"};
  add_common_options(cmd);
  cmd.app->add_option("--posts", o->posts, "Posts JSONL (usually one split)")->required();
  cmd.app->add_option("--episode-len", o->length, "Posts per episode (L)")->capture_default_str();
  cmd.app->add_option("--min-episodes", o->min_episodes)->capture_default_str();
  cmd.app->add_option("--mode", o->mode)->check(CLI::IsMember({"fixed", "sampled"}))
      ->capture_default_str();
  cmd.run = [o](Command& c) {
    if (o->length == 0) throw ValidationError("episode length must be positive");
    Stage stage(c, "episodes");
    stage.input(o->posts);
    stage.output("episodes.csv");
    run_stage(stage, [&] {
      const std::vector<Post> all = load_all(o->posts);
      Rng rng(c.common.seed);
      const auto mode = o->mode == "fixed" ? EpisodeMode::kFixed : EpisodeMode::kSampled;
      const auto episodes = assemble_episodes(all, o->length, o->min_episodes, mode, &rng);
      std::ofstream out(stage.out("episodes.csv"));
      if (!out) throw Error("cannot write " + stage.out("episodes.csv").string());
      out << "market,author,episode,post_ids\n";
      std::map<std::pair<std::string, std::string>, std::size_t> next;
      for (const Episode& e : episodes) {
        std::string ids;
        for (std::size_t i : e.posts) ids += (ids.empty() ? "" : " ") + all[i].post_id;
        const std::size_t k = next[{e.market, e.author}]++;
        out << csv::join({e.market, e.author, std::to_string(k), ids}) << '\n';
      }
      std::cerr << "episodes: " << episodes.size() << " episodes of " << o->length << " posts\n";
    });
  };
}

void add_pgp_pairs(CLI::App& app, std::deque<Command>& commands) {
  auto posts = std::make_shared<std::string>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("pgp-pairs", "Cross-market candidate pairs from shared PGP keys");
  cmd.sections = {"corpus"};
  add_common_options(cmd);
  cmd.app->add_option("--posts", *posts, "Ingested (not preprocessed) posts.jsonl")->required();
  cmd.run = [posts](Command& c) {
    Stage stage(c, "pgp-pairs");
    stage.input(*posts);
    stage.output("pgp_pairs.csv");
    run_stage(stage, [&] {
      const auto pairs = extract_pgp_candidate_pairs(load_all(*posts));
      write_migration_labels(stage.out("pgp_pairs.csv"), pairs);
      std::cerr << "pgp-pairs: " << pairs.size() << " candidate pairs\n";
    });
  };
}

}  // namespace

void register_corpus_commands(CLI::App& app, std::deque<Command>& commands) {
  add_synth(app, commands);
  add_ingest(app, commands);
  add_preprocess(app, commands);
  add_split(app, commands);
  add_episodes(app, commands);
  add_pgp_pairs(app, commands);
}

}  // namespace epistyle::cli
