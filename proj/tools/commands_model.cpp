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


// train-tokenizer, train.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>

#include "epistyle/checkpoint.hpp"
#include "epistyle/corpus.hpp"
#include "epistyle/hetgraph.hpp"
#include "epistyle/model.hpp"
#include "epistyle/tokenize.hpp"
#include "epistyle/train.hpp"
#include "stage.hpp"

#include <json.hpp>

namespace epistyle::cli {

namespace {

std::string vocab_file(const std::string& kind) { return "vocab." + kind + ".txt"; }

void add_train_tokenizer(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string posts;
    std::string kind = "bpe";
    std::size_t size = 0;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("train-tokenizer", "Char or byte-level BPE vocabulary");
  cmd.sections = {"tokenizer"};
  add_common_options(cmd);
  cmd.app->add_option("--posts", o->posts, "Training-split posts")->required();
  cmd.app->add_option("--kind", o->kind)->check(CLI::IsMember({"char", "bpe"}))
      ->capture_default_str();
  cmd.app->add_option("--size", o->size, "Vocabulary size (default: 1000 char, 30000 bpe)");
  cmd.run = [o](Command& c) {
    Stage stage(c, "train-tokenizer");
    stage.input(o->posts);
    stage.output(vocab_file(o->kind));
    run_stage(stage, [&] {
      LoadResult r = load_posts(o->posts);
      if (r.posts.empty()) throw ValidationError("no usable posts in " + o->posts);
      std::vector<std::string> texts;
      for (Post& p : r.posts) texts.push_back(std::move(p.body));
      const bool bpe = o->kind == "bpe";
      const std::size_t size = o->size ? o->size : bpe ? 30000 : 1000;
      const Vocab v = bpe ? train_bpe(texts, size) : train_char_vocab(texts, size);
      v.save(stage.out(vocab_file(o->kind)));
      std::cerr << "train-tokenizer: " << o->kind << " vocabulary of " << v.size()
                << " tokens\n";
    });
  };
}

/// Context rows for `vocab` from a `<market>.context.tsv`; subforums without
/// a row stay zero.
Tensor load_context_init(const fs::path& path, const ContextVocab& vocab, std::size_t dim) {
  const NodeEmbeddings emb = NodeEmbeddings::load(path);
  if (emb.vectors.cols() != dim) {
    throw ValidationError(path.string() + " has dimension " + std::to_string(emb.vectors.cols()) +
                          ", model context dimension is " + std::to_string(dim));
  }
  Tensor init({vocab.subforums.size(), dim}, Real(0));
  for (std::size_t r = 0; r < vocab.subforums.size(); ++r) {
    const auto row = emb.find(vocab.subforums[r]);
    if (!row) {
      warn("no pretrained context for subforum '" + vocab.subforums[r] + "' in " + path.string());
      continue;
    }
    std::copy(row->begin(), row->end(), init.row(r).begin());
  }
  return init;
}

void add_train(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string posts;
    std::string tokenizer_dir;
    std::string tokenizer = "bpe";
    std::vector<std::string> markets;
    bool multitask = false;
    std::string labels;
    std::string graph_dir;
    std::string graph_init = "random";
    std::string pooling = "mean";
    std::string loss = "sm";
    TrainConfig train;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("train", "Train the episode model (single-task or multitask)");
  cmd.sections = {"model", "train"};
  add_common_options(cmd);
  CLI::App* a = cmd.app;
  a->add_option("--posts", o->posts, "Training-split posts")->required();
  a->add_option("--tokenizer-dir", o->tokenizer_dir, "train-tokenizer output")->required();
  a->add_option("--tokenizer", o->tokenizer)->check(CLI::IsMember({"char", "bpe"}))
      ->capture_default_str();
  a->add_option("--market", o->markets, "Single-task market")->delimiter(',');
  a->add_flag("--multitask", o->multitask, "One task per market plus the cross-market task");
  a->add_option("--labels", o->labels, "Migration labels CSV for the cross-market task");
  a->add_option("--graph-dir", o->graph_dir, "graph-embed output (for pretrained init)");
  a->add_option("--graph-init", o->graph_init)->check(CLI::IsMember({"pretrained", "random"}))
      ->capture_default_str();
  a->add_option("--pooling", o->pooling)->check(CLI::IsMember({"mean", "transformer"}))
      ->capture_default_str();
  a->add_option("--loss", o->loss)->check(CLI::IsMember({"sm", "cf", "af", "ms"}))
      ->capture_default_str();
  a->add_option("--episode-len", o->train.episode_length)->capture_default_str();
  a->add_option("--epochs", o->train.epochs)->capture_default_str();
  a->add_option("--batch-size", o->train.batch_size)->capture_default_str();
  a->add_option("--lr", o->train.lr)->capture_default_str();
  a->add_option("--plateau-factor", o->train.plateau_factor)->capture_default_str();
  a->add_option("--plateau-patience", o->train.plateau_patience)->capture_default_str();
  a->add_option("--val-fraction", o->train.val_fraction)->capture_default_str();
  a->add_option("--p-cross", o->train.p_cross)->capture_default_str();
  a->add_option("--clip-norm", o->train.clip_norm)->capture_default_str();
  a->add_option("--steps-per-epoch", o->train.steps_per_epoch, "0: ceil(episodes / batch)")
      ->capture_default_str();
  cmd.run = [o](Command& c) {
    o->train.seed = c.common.seed;
    o->train.validate();
    if (o->multitask && !o->markets.empty()) {
      throw ValidationError("--multitask and --market are exclusive");
    }
    if (o->graph_init == "pretrained" && o->graph_dir.empty()) {
      throw ValidationError("--graph-init pretrained needs --graph-dir");
    }
    const fs::path vocab_path = fs::path(o->tokenizer_dir) / vocab_file(o->tokenizer);
    Stage stage(c, "train");
    stage.input(o->posts);
    stage.input(vocab_path);
    if (!o->labels.empty()) stage.input(o->labels);
    if (o->graph_init == "pretrained") stage.input(o->graph_dir);
    for (const char* out : {"model/model.ini", "model/contexts.json", "model/model.ckpt",
                            "model/vocab.txt", "heads.ckpt", "heads.json", "run_log.jsonl"}) {
      stage.output(out);
    }
    run_stage(stage, [&] {
      LoadResult loaded = load_posts(o->posts);
      if (loaded.posts.empty()) throw ValidationError("no usable posts in " + o->posts);
      const std::vector<Post>& posts = loaded.posts;
      const Vocab vocab = Vocab::load(vocab_path);
      if (vocab.kind() != parse_vocab_kind(o->tokenizer)) {
        throw ValidationError(vocab_path.string() + " is not a " + o->tokenizer + " vocabulary");
      }

      std::map<std::string, std::set<std::string>> subforums;
      for (const Post& p : posts) subforums[p.market].insert(p.subforum);
      std::vector<std::string> task_markets = o->markets;
      if (o->multitask || task_markets.empty()) {
        if (!o->multitask && subforums.size() > 1) {
          throw ValidationError("posts span several markets; pass --market or --multitask");
        }
        task_markets.clear();
        for (const auto& [m, _] : subforums) task_markets.push_back(m);
      }
      for (const std::string& m : task_markets) {
        if (!subforums.count(m)) throw ValidationError("no posts for market '" + m + "'");
      }

      ModelConfig mc;
      if (!c.common.config.empty()) mc = model_config_from(Config::load(c.common.config));
      mc.vocab_size = vocab.size();
      mc.pooling = parse_pooling(o->pooling);
      mc.validate();
      EpisodeModel model(mc, c.common.seed);
      // Every market gets a context table so the model can embed any of
      // them; single-task runs only train their own, so only trained markets
      // need a pretrained file.
      for (const auto& [m, subs] : subforums) {
        ContextVocab cv(std::vector<std::string>(subs.begin(), subs.end()));
        const fs::path path = fs::path(o->graph_dir) / (m + ".context.tsv");
        const bool trained =
            std::find(task_markets.begin(), task_markets.end(), m) != task_markets.end();
        if (o->graph_init == "pretrained" && (trained || fs::exists(path))) {
          require_path(path);
          const Tensor init = load_context_init(path, cv, mc.context_dim);
          model.add_market(m, std::move(cv), &init);
        } else {
          model.add_market(m, std::move(cv));
        }
      }

      std::vector<MigrationLabel> labels;
      if (!o->labels.empty()) labels = load_migration_labels(o->labels);
      if (!o->multitask) o->train.p_cross = 0;
      HeadConfig head;
      head.kind = parse_loss_kind(o->loss);
      TaskRegistry registry =
          build_registry(model, vocab, posts, task_markets, labels, head, o->train);
      for (const Task& t : registry.tasks) {
        std::cerr << "train: task " << t.name << ": " << t.num_classes << " classes, "
                  << t.train_episodes << " training episodes, " << t.validation.size()
                  << " validation episodes\n";
      }
      const TrainResult result = train(model, registry, o->train);
      for (const EpochLog& e : result.log) {
        std::cerr << "train: epoch " << e.epoch << " val_loss " << e.val_loss << " lr " << e.lr
                  << '\n';
      }
      std::cerr << "train: best epoch " << result.best_epoch << '\n';

      model.save(stage.out("model"));
      fs::copy_file(vocab_path, stage.out("model/vocab.txt"),
                    fs::copy_options::overwrite_existing);
      std::vector<const Parameter*> heads;
      for (Task& t : registry.tasks) {
        for (Parameter* p : t.head->parameters()) heads.push_back(p);
      }
      save_checkpoint(stage.out("heads.ckpt"), heads);
      // Class membership per head, so head rows can be traced to identities.
      nlohmann::json meta = {{"loss", o->loss}, {"heads", nlohmann::json::object()}};
      for (const Task& t : registry.tasks) {
        nlohmann::json members = nlohmann::json::array();
        for (const Task::Stream& st : t.streams) {
          members.push_back({{"label", st.label}, {"market", st.market}, {"author", st.author}});
        }
        meta["heads"][t.name] = {{"classes", t.num_classes},
                                 {"parameter", "head/" + t.name},
                                 {"members", members}};
      }
      std::ofstream hj(stage.out("heads.json"));
      if (!hj) throw Error("cannot write " + stage.out("heads.json").string());
      hj << meta.dump(2) << '\n';
      write_run_log(stage.out("run_log.jsonl"), result.log);
    });
  };
}

}  // namespace

void register_model_commands(CLI::App& app, std::deque<Command>& commands) {
  add_train_tokenizer(app, commands);
  add_train(app, commands);
}

}  // namespace epistyle::cli
