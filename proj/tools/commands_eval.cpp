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


// eval, sybil, attribute, compare.

#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

#include "epistyle/checkpoint.hpp"
#include "epistyle/corpus.hpp"
#include "epistyle/eval.hpp"
#include "epistyle/model.hpp"
#include "epistyle/tokenize.hpp"
#include "stage.hpp"

namespace epistyle::cli {

namespace {

using json = nlohmann::json;

struct LoadedModel {
  EpisodeModel model;
  Vocab vocab;
};

LoadedModel load_model(const fs::path& dir) {
  require_path(dir);
  require_path(dir / "vocab.txt");
  return {EpisodeModel::load(dir), Vocab::load(dir / "vocab.txt")};
}

std::vector<Post> load_all(const fs::path& path) {
  require_path(path);
  LoadResult r = load_posts(path);
  if (r.posts.empty()) throw ValidationError("no usable posts in " + path.string());
  return std::move(r.posts);
}

/// Rows of `index` that satisfy `keep`, as a standalone index.
RetrievalIndex subset(const RetrievalIndex& index, const std::function<bool(std::size_t)>& keep) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (keep(i)) rows.push_back(i);
  }
  const std::size_t d = index.embeddings().cols();
  Tensor e({rows.size(), d});
  std::vector<std::string> markets, authors, ids;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = index.embeddings().row(rows[r]);
    std::copy(src.begin(), src.end(), e.row(r).begin());
    markets.push_back(index.market(rows[r]));
    authors.push_back(index.author(rows[r]));
    ids.push_back(index.id(rows[r]));
  }
  return RetrievalIndex(std::move(e), std::move(markets), std::move(authors), std::move(ids));
}

json report_json(const MetricsReport& r) {
  json recall = json::object();
  for (const auto& [k, v] : r.recall) recall[std::to_string(k)] = v;
  return {{"mrr", r.mrr},       {"recall", recall},        {"queries", r.queries},
          {"excluded", r.excluded}, {"kappa", r.kappa},    {"seed", r.seed},
          {"random_mrr", r.random_mrr}};
}

void add_eval(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string model_dir;
    std::string posts;
    std::string train_posts;
    std::size_t length = 5;
    std::size_t kappa = 1000;
    std::vector<std::size_t> ks{kDefaultRecallKs.begin(), kDefaultRecallKs.end()};
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("eval", "Per-market retrieval MRR and R@k on held-out posts");
  cmd.sections = {"eval"};
  add_common_options(cmd);
  CLI::App* a = cmd.app;
  a->add_option("--model-dir", o->model_dir, "train output's model/ directory")->required();
  a->add_option("--posts", o->posts, "Test-split posts")->required();
  a->add_option("--train-posts", o->train_posts, "Training posts, for the seen/novel breakdown");
  a->add_option("--episode-len", o->length)->capture_default_str();
  a->add_option("--kappa", o->kappa, "Sampled queries per market")->capture_default_str();
  a->add_option("--ks", o->ks, "Recall cutoffs")->delimiter(',')->capture_default_str();
  cmd.run = [o](Command& c) {
    Stage stage(c, "eval");
    stage.input(o->model_dir);
    stage.input(o->posts);
    if (!o->train_posts.empty()) stage.input(o->train_posts);
    stage.output("metrics.json");
    stage.output("embeddings.tsv");
    run_stage(stage, [&] {
      LoadedModel lm = load_model(o->model_dir);
      const std::vector<Post> posts = load_all(o->posts);
      std::set<std::string> seen;
      if (!o->train_posts.empty()) {
        for (const Post& p : load_all(o->train_posts)) seen.insert(p.market + "\t" + p.author);
      }
      const RetrievalIndex all = embed_episodes(lm.model, lm.vocab, posts, o->length);
      write_embeddings_tsv(stage.out("embeddings.tsv"), all);

      std::set<std::string> markets;
      for (std::size_t i = 0; i < all.size(); ++i) markets.insert(all.market(i));
      json per_market = json::object();
      double mrr_sum = 0;
      for (const std::string& m : markets) {
        const RetrievalIndex index = subset(all, [&](std::size_t i) { return all.market(i) == m; });
        const MetricsReport r = evaluate_retrieval(index, o->kappa, c.common.seed, o->ks);
        json j = report_json(r);
        j["episodes"] = index.size();
        if (!seen.empty()) {
          const SeenNovelReport sn = seen_novel_report(index, seen, o->kappa, c.common.seed);
          if (sn.seen) j["seen"] = report_json(*sn.seen);
          if (sn.novel) j["novel"] = report_json(*sn.novel);
        }
        per_market[m] = j;
        mrr_sum += r.mrr;
        std::cerr << "eval: " << m << ": MRR " << r.mrr << " (random " << r.random_mrr << ") over "
                  << r.queries << " queries\n";
      }
      const json metrics = {{"episode_len", o->length},
                            {"markets", per_market},
                            {"mean_mrr", mrr_sum / static_cast<double>(markets.size())}};
      std::ofstream out(stage.out("metrics.json"));
      if (!out) throw Error("cannot write " + stage.out("metrics.json").string());
      out << metrics.dump(2) << '\n';
    });
  };
}

void add_sybil(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string model_dir;
    std::string posts;
    std::string labels;
    std::string market;
    std::string user;
    std::size_t length = 5;
    std::size_t k = 10;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("sybil", "Top-k cross-market alias candidates per user");
  cmd.sections = {"eval"};
  add_common_options(cmd);
  CLI::App* a = cmd.app;
  a->add_option("--model-dir", o->model_dir)->required();
  a->add_option("--posts", o->posts, "Posts of at least two markets")->required();
  a->add_option("--labels", o->labels, "Migration labels to score against");
  a->add_option("--market", o->market, "Only users of this market");
  a->add_option("--user", o->user, "Only this user (needs --market)");
  a->add_option("--episode-len", o->length)->capture_default_str();
  a->add_option("--k", o->k)->capture_default_str();
  cmd.run = [o](Command& c) {
    if (!o->user.empty() && o->market.empty()) throw ValidationError("--user needs --market");
    Stage stage(c, "sybil");
    stage.input(o->model_dir);
    stage.input(o->posts);
    if (!o->labels.empty()) stage.input(o->labels);
    stage.output("sybil.csv");
    if (!o->labels.empty()) stage.output("sybil.json");
    run_stage(stage, [&] {
      LoadedModel lm = load_model(o->model_dir);
      const RetrievalIndex index =
          embed_episodes(lm.model, lm.vocab, load_all(o->posts), o->length);
      std::set<UserRef> users;
      for (std::size_t i = 0; i < index.size(); ++i) {
        if (!o->market.empty() && index.market(i) != o->market) continue;
        if (!o->user.empty() && index.author(i) != o->user) continue;
        users.insert({index.market(i), index.author(i)});
      }
      if (users.empty()) throw ValidationError("no matching users with complete episodes");
      std::map<UserRef, SybilCandidate> best;
      std::ofstream out(stage.out("sybil.csv"));
      if (!out) throw Error("cannot write " + stage.out("sybil.csv").string());
      out << "market,user,candidate_market,candidate_user,support,mean_similarity\n";
      for (const UserRef& u : users) {
        const SybilCandidate s = topk_sybil(index, u.market, u.user, o->k);
        best[u] = s;
        out << u.market << ',' << u.user << ',' << s.market << ',' << s.user << ',' << s.support
            << ',' << format_double(s.mean_similarity) << '\n';
      }
      if (o->labels.empty()) return;
      json pairs = json::array();
      std::size_t recovered = 0, total = 0;
      for (const MigrationLabel& l : load_migration_labels(o->labels)) {
        if (!l.same_author || !*l.same_author) continue;
        auto it = best.find(l.user_a);
        if (it == best.end()) continue;
        ++total;
        const bool hit = it->second.market == l.user_b.market && it->second.user == l.user_b.user;
        recovered += hit;
        pairs.push_back({{"user", to_string(l.user_a)},
                         {"alias", to_string(l.user_b)},
                         {"candidate", it->second.market + ":" + it->second.user},
                         {"recovered", hit}});
      }
      const json summary = {{"k", o->k}, {"recovered", recovered}, {"total", total},
                            {"pairs", pairs}};
      std::ofstream js(stage.out("sybil.json"));
      js << summary.dump(2) << '\n';
      std::cerr << "sybil: recovered " << recovered << " of " << total << " labeled aliases\n";
    });
  };
}

struct HeadRow {
  std::vector<Real> weights;
  AttributionTarget kind = AttributionTarget::kDot;
  Real scale = 1;
};

/// The market head's row for `user`, with the logit form of the head's loss.
HeadRow head_row(const fs::path& train_dir, const std::string& market, const std::string& user) {
  std::ifstream in(train_dir / "heads.json");
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw ValidationError("malformed heads.json: " + std::string(e.what()));
  }
  const std::string loss = meta.at("loss").get<std::string>();
  const LossKind kind = parse_loss_kind(loss);
  if (kind == LossKind::kMultiSimilarity) {
    throw ValidationError("the MS head has no weight rows; use --target centroid");
  }
  if (!meta.at("heads").contains(market)) {
    throw ValidationError("no head for market '" + market + "' in heads.json");
  }
  const json& head = meta["heads"][market];
  int label = -1;
  for (const json& m : head.at("members")) {
    if (m.at("author") == user) label = m.at("label").get<int>();
  }
  if (label < 0) throw ValidationError("user '" + user + "' has no row in head " + market);
  const auto stored = load_checkpoint(train_dir / "heads.ckpt");
  const std::string name = head.at("parameter").get<std::string>();
  auto it = stored.find(name);
  if (it == stored.end()) throw ValidationError("heads.ckpt lacks " + name);
  HeadRow out;
  const auto row = it->second.row(static_cast<std::size_t>(label));
  out.weights.assign(row.begin(), row.end());
  const HeadConfig defaults;
  if (kind == LossKind::kCosFace) {
    out.kind = AttributionTarget::kCosine;
    out.scale = defaults.cf_scale;
  } else if (kind == LossKind::kArcFace) {
    out.kind = AttributionTarget::kCosine;
    out.scale = defaults.af_scale;
  }
  return out;
}

void add_attribute(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::string model_dir;
    std::string posts;
    std::string market;
    std::string user;
    std::size_t episode = 0;
    std::size_t length = 5;
    std::size_t steps = 50;
    std::string target = "centroid";
    std::string train_dir;
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("attribute",
                               "Integrated-gradients token attribution of one episode");
  cmd.sections = {"eval"};
  add_common_options(cmd);
  CLI::App* a = cmd.app;
  a->add_option("--model-dir", o->model_dir)->required();
  a->add_option("--posts", o->posts)->required();
  a->add_option("--market", o->market)->required();
  a->add_option("--user", o->user)->required();
  a->add_option("--episode", o->episode, "Index among the user's fixed episodes")
      ->capture_default_str();
  a->add_option("--episode-len", o->length)->capture_default_str();
  a->add_option("--steps", o->steps, "Quadrature nodes")->capture_default_str();
  a->add_option("--target", o->target,
                "centroid: cosine to the user's mean episode; logit: the user's head logit")
      ->check(CLI::IsMember({"centroid", "logit"}))
      ->capture_default_str();
  a->add_option("--train-dir", o->train_dir, "train output holding heads.ckpt (for --target logit)");
  cmd.run = [o](Command& c) {
    if (o->target == "logit" && o->train_dir.empty()) {
      throw ValidationError("--target logit needs --train-dir");
    }
    Stage stage(c, "attribute");
    stage.input(o->model_dir);
    stage.input(o->posts);
    if (o->target == "logit") {
      stage.input(fs::path(o->train_dir) / "heads.ckpt");
      stage.input(fs::path(o->train_dir) / "heads.json");
    }
    stage.output("attributions.jsonl");
    run_stage(stage, [&] {
      LoadedModel lm = load_model(o->model_dir);
      std::vector<Post> mine;
      for (Post& p : load_all(o->posts)) {
        if (p.market == o->market && p.author == o->user) mine.push_back(std::move(p));
      }
      const auto episodes = assemble_episodes(mine, o->length, 1, EpisodeMode::kFixed);
      if (o->episode >= episodes.size()) {
        throw ValidationError("user has " + std::to_string(episodes.size()) +
                              " complete episodes; --episode " + std::to_string(o->episode) +
                              " is out of range");
      }
      std::vector<EpisodeInput> inputs;
      for (const Episode& e : episodes) {
        inputs.push_back(lm.model.make_episode_input(e, mine, lm.vocab));
      }
      const EpisodeInput& target = inputs[o->episode];
      EpisodeAttribution attr;
      if (o->target == "centroid") {
        const Tensor emb = lm.model.embed_eval(inputs);
        std::vector<Real> centroid(emb.cols(), Real(0));
        for (std::size_t r = 0; r < emb.rows(); ++r) {
          for (std::size_t k = 0; k < emb.cols(); ++k) centroid[k] += emb.at(r, k);
        }
        for (Real& v : centroid) v /= static_cast<Real>(emb.rows());
        attr = attribute_episode(lm.model, target, centroid, o->steps);
      } else {
        const HeadRow row = head_row(o->train_dir, o->market, o->user);
        attr = attribute_episode(lm.model, target, row.weights, o->steps, row.kind, row.scale);
      }

      std::ofstream out(stage.out("attributions.jsonl"));
      if (!out) throw Error("cannot write " + stage.out("attributions.jsonl").string());
      const Episode& ep = episodes[o->episode];
      for (std::size_t p = 0; p < ep.posts.size(); ++p) {
        const auto& tokens = target.posts[p].tokens;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
          if (tokens[t] == Vocab::kPadId) continue;
          out << json{{"post_id", mine[ep.posts[p]].post_id},
                      {"token", lm.vocab.token(tokens[t])},
                      {"score", attr.token_scores[p][t]}}
                     .dump()
              << '\n';
        }
      }
      std::cerr << "attribute: f(input) " << attr.ig.f_input << ", f(baseline) "
                << attr.ig.f_baseline << ", completeness error " << attr.ig.completeness_error
                << '\n';
    });
  };
}

/// Value at a dotted key path; JSONL files use their last line.
double extract_value(const fs::path& path, const std::string& key) {
  require_path(path);
  std::ifstream in(path);
  std::string line, last, whole;
  while (std::getline(in, line)) {
    if (!line.empty()) last = line;
    whole += line + '\n';
  }
  json doc;
  try {
    doc = path.extension() == ".jsonl" ? json::parse(last) : json::parse(whole);
  } catch (const json::exception& e) {
    throw ValidationError("malformed JSON in " + path.string() + ": " + e.what());
  }
  const json* node = &doc;
  std::stringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (!node->is_object() || !node->contains(part)) {
      throw ValidationError("key '" + key + "' not found in " + path.string());
    }
    node = &(*node)[part];
  }
  if (!node->is_number()) throw ValidationError("key '" + key + "' in " + path.string() +
                                                " is not a number");
  return node->get<double>();
}

void add_compare(CLI::App& app, std::deque<Command>& commands) {
  struct Opts {
    std::vector<std::string> a;
    std::vector<std::string> b;
    std::string key = "mean_mrr";
  };
  auto o = std::make_shared<Opts>();
  Command& cmd = commands.emplace_back();
  cmd.app = app.add_subcommand("compare",
                               "Paired signed-rank test between two sets of replicate runs");
  cmd.sections = {"eval"};
  add_common_options(cmd);
  CLI::App* a = cmd.app;
  a->add_option("--a", o->a, "metrics.json or run_log.jsonl files of arm A")->required();
  a->add_option("--b", o->b, "Files of arm B, paired with --a by position")->required();
  a->add_option("--key", o->key, "Dotted key, e.g. markets.agora.mrr or val_loss")
      ->capture_default_str();
  cmd.run = [o](Command& c) {
    if (o->a.size() != o->b.size()) throw ValidationError("--a and --b need equal counts");
    Stage stage(c, "compare");
    for (const auto& f : o->a) stage.input(f);
    for (const auto& f : o->b) stage.input(f);
    stage.output("compare.json");
    run_stage(stage, [&] {
      std::vector<double> va, vb;
      for (const auto& f : o->a) va.push_back(extract_value(f, o->key));
      for (const auto& f : o->b) vb.push_back(extract_value(f, o->key));
      const double p = wmw_paired(va, vb);
      std::size_t a_wins = 0, b_wins = 0;
      for (std::size_t i = 0; i < va.size(); ++i) {
        a_wins += va[i] > vb[i];
        b_wins += vb[i] > va[i];
      }
      const json report = {{"key", o->key}, {"n", va.size()},      {"a", va},
                           {"b", vb},       {"a_greater", a_wins}, {"b_greater", b_wins},
                           {"p_value", p}};
      std::ofstream out(stage.out("compare.json"));
      if (!out) throw Error("cannot write " + stage.out("compare.json").string());
      out << report.dump(2) << '\n';
      std::cout << "p = " << p << " (n = " << va.size() << ", a > b in " << a_wins << ", b > a in "
                << b_wins << ")\n";
    });
  };
}

}  // namespace

void register_eval_commands(CLI::App& app, std::deque<Command>& commands) {
  add_eval(app, commands);
  add_sybil(app, commands);
  add_attribute(app, commands);
  add_compare(app, commands);
}

}  // namespace epistyle::cli
