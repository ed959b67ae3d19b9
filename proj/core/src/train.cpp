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

#include "epistyle/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "epistyle/optim.hpp"

namespace epistyle {
namespace {

using nlohmann::json;

// Posts and fixed episodes of one (market, author) identity.
struct Identity {
  std::vector<std::size_t> posts;  // time order
  std::vector<std::vector<std::size_t>> episodes;
  std::set<std::size_t> validation;  // episode indices
};

std::vector<Parameter*> task_parameters(EpisodeModel& model, Task& task) {
  auto params = model.shared_parameters();
  for (const auto& m : task.markets) {
    for (Parameter* p : model.market_parameters(m)) params.push_back(p);
  }
  for (Parameter* p : task.head->parameters()) params.push_back(p);
  return params;
}

EpisodeInput window_input(const TaskRegistry& registry, const std::string& market,
                          std::span<const std::size_t> posts) {
  EpisodeInput in;
  in.market = market;
  in.posts.reserve(posts.size());
  for (std::size_t i : posts) in.posts.push_back(registry.inputs[i]);
  return in;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  if (epochs == 0) throw ValidationError("epochs must be positive");
  if (!(lr > 0)) throw ValidationError("learning rate must be positive");
  if (!(val_fraction > 0 && val_fraction < 1)) {
    throw ValidationError("validation fraction must lie in (0, 1)");
  }
  if (episode_length < 1 || episode_length > 9) {
    throw ValidationError("episode length must lie in 1..9");
  }
  if (!(p_cross >= 0 && p_cross <= 1)) throw ValidationError("P_cr must lie in [0, 1]");
  if (!(plateau_factor > 0 && plateau_factor < 1)) {
    throw ValidationError("plateau factor must lie in (0, 1)");
  }
}

std::size_t TaskRegistry::market_task_count() const {
  return static_cast<std::size_t>(
      std::count_if(tasks.begin(), tasks.end(), [](const Task& t) { return !t.cross; }));
}

Task* TaskRegistry::cross_task() {
  for (Task& t : tasks) {
    if (t.cross) return &t;
  }
  return nullptr;
}

Task& TaskRegistry::find(const std::string& name) {
  for (Task& t : tasks) {
    if (t.name == name) return t;
  }
  throw ValidationError("no task named '" + name + "'");
}

TaskRegistry build_registry(EpisodeModel& model, const Vocab& vocab, std::span<const Post> posts,
                            std::span<const std::string> markets,
                            std::span<const MigrationLabel> labels, const HeadConfig& head,
                            const TrainConfig& config) {
  config.validate();
  if (markets.empty()) throw ValidationError("no markets to train on");
  const std::set<std::string> wanted(markets.begin(), markets.end());
  const std::size_t L = config.episode_length;

  TaskRegistry reg;
  std::vector<Post> kept;
  for (const Post& p : posts) {
    if (!wanted.count(p.market)) continue;
    reg.inputs.push_back(model.make_post_input(p, vocab));
    reg.input_market.push_back(p.market);
    kept.push_back(p);
  }

  std::map<UserRef, Identity> identities;
  for (const Episode& e : assemble_episodes(kept, L, 1, EpisodeMode::kFixed)) {
    identities[{e.market, e.author}].episodes.push_back(e.posts);
  }
  {
    std::map<UserRef, std::vector<std::size_t>> by_user;
    for (std::size_t i = 0; i < kept.size(); ++i) by_user[{kept[i].market, kept[i].author}].push_back(i);
    for (auto& [user, idx] : by_user) {
      auto it = identities.find(user);
      if (it == identities.end()) continue;
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return kept[a].timestamp < kept[b].timestamp;
      });
      it->second.posts = std::move(idx);
    }
  }

  // Author-stratified validation sample; every identity keeps at least one
  // training episode.
  Rng val_rng(mix_seed(config.seed, fnv1a64("validation")));
  for (auto& [user, id] : identities) {
    const std::size_t count = id.episodes.size();
    const auto want = static_cast<std::size_t>(
        std::floor(static_cast<double>(count) * config.val_fraction + 0.5));
    const std::size_t k = std::min(want, count - 1);
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(order[i], order[i + uniform_index(val_rng, count - i)]);
      id.validation.insert(order[i]);
    }
  }

  auto make_stream = [&](const UserRef& user, const Identity& id, int label) {
    Task::Stream s;
    s.market = user.market;
    s.author = user.user;
    s.label = label;
    std::set<std::size_t> held_out;
    for (std::size_t e : id.validation) held_out.insert(id.episodes[e].begin(), id.episodes[e].end());
    for (std::size_t p : id.posts) {
      if (!held_out.count(p)) s.posts.push_back(p);
    }
    s.episodes = s.posts.size() / L;
    return s;
  };
  auto add_validation = [&](Task& task, const UserRef& user, const Identity& id, int label) {
    for (std::size_t e : id.validation) {
      task.validation.push_back(window_input(reg, user.market, id.episodes[e]));
      task.validation_labels.push_back(label);
    }
  };

  const std::size_t dim = model.config().episode_dim();
  for (const std::string& market : wanted) {
    if (!model.has_market(market)) throw ValidationError("model has no context for '" + market + "'");
    Task task;
    task.name = market;
    task.markets = {market};
    for (const auto& [user, id] : identities) {
      if (user.market != market) continue;
      const int label = static_cast<int>(task.num_classes++);
      Task::Stream s = make_stream(user, id, label);
      task.train_episodes += s.episodes;
      task.streams.push_back(std::move(s));
      add_validation(task, user, id, label);
    }
    if (task.train_episodes == 0) {
      throw ValidationError("market '" + market + "' has no author with a full episode");
    }
    task.head = std::make_unique<MetricHead>(market, head, task.num_classes, dim, config.seed);
    reg.tasks.push_back(std::move(task));
  }

  if (config.p_cross > 0) {
    std::vector<Episode> all;
    for (const auto& [user, id] : identities) all.push_back({user.market, user.user, {}});
    const CrossDataset cross = build_cross_dataset(labels, all);
    std::set<std::string> cross_markets;
    for (const auto& [user, cls] : cross.class_of) cross_markets.insert(user.market);
    if (cross_markets.size() < 2) {
      warn("no cross-market clusters available; cross task disabled (P_cr = 0)");
    } else {
      Task task;
      task.name = kCrossTaskName;
      task.cross = true;
      task.markets.assign(cross_markets.begin(), cross_markets.end());
      task.num_classes = cross.num_classes;
      for (const auto& [user, cls] : cross.class_of) {
        const Identity& id = identities.at(user);
        Task::Stream s = make_stream(user, id, cls);
        task.train_episodes += s.episodes;
        task.streams.push_back(std::move(s));
        add_validation(task, user, id, cls);
      }
      task.head = std::make_unique<MetricHead>(kCrossTaskName, head, task.num_classes, dim,
                                               config.seed);
      reg.tasks.push_back(std::move(task));
      reg.p_cross = config.p_cross;
    }
  }
  return reg;
}

std::size_t sample_task(const TaskRegistry& registry, Rng& rng) {
  if (registry.tasks.empty()) throw ValidationError("empty task registry");
  const Task* cross = nullptr;
  std::size_t cross_index = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < registry.tasks.size(); ++i) {
    if (registry.tasks[i].cross) {
      cross = &registry.tasks[i];
      cross_index = i;
    } else {
      total += registry.tasks[i].train_episodes;
    }
  }
  if (cross && (uniform01(rng) < registry.p_cross || total == 0)) return cross_index;
  if (total == 0) throw ValidationError("no market task has training episodes");
  std::size_t r = uniform_index(rng, total);
  for (std::size_t i = 0; i < registry.tasks.size(); ++i) {
    if (registry.tasks[i].cross) continue;
    if (r < registry.tasks[i].train_episodes) return i;
    r -= registry.tasks[i].train_episodes;
  }
  throw Error("task sampling fell through");
}

Batch sample_batch(const TaskRegistry& registry, const Task& task, std::size_t n,
                   std::size_t length, Rng& rng) {
  if (task.train_episodes == 0) throw ValidationError("task '" + task.name + "' has no episodes");
  Batch batch;
  batch.episodes.reserve(n);
  batch.labels.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t r = uniform_index(rng, task.train_episodes);
    const Task::Stream* stream = nullptr;
    for (const Task::Stream& s : task.streams) {
      if (r < s.episodes) {
        stream = &s;
        break;
      }
      r -= s.episodes;
    }
    const std::size_t start = uniform_index(rng, stream->posts.size() - length + 1);
    batch.episodes.push_back(window_input(
        registry, stream->market,
        std::span<const std::size_t>(stream->posts).subspan(start, length)));
    batch.labels.push_back(stream->label);
  }
  return batch;
}

double validation_loss(EpisodeModel& model, Task& task, std::size_t batch_size) {
  if (task.validation.empty()) return 0;
  double total = 0;
  std::size_t weight = 0;
  for (std::size_t begin = 0; begin < task.validation.size(); begin += batch_size) {
    const std::size_t end = std::min(task.validation.size(), begin + batch_size);
    std::vector<const EpisodeInput*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&task.validation[i]);
    Tape tape;
    Var emb = model.embed_batch(tape, ptrs, Mode{});
    Var loss = task.head->loss(
        tape, emb, std::span<const int>(task.validation_labels).subspan(begin, end - begin));
    total += static_cast<double>(loss.value()[0]) * static_cast<double>(end - begin);
    weight += end - begin;
  }
  return total / static_cast<double>(weight);
}

std::size_t select_best_epoch(std::span<const double> val_losses) {
  if (val_losses.empty()) throw ValidationError("no epochs to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_losses.size(); ++i) {
    if (val_losses[i] < val_losses[best]) best = i;
  }
  return best;
}

TrainResult train(EpisodeModel& model, TaskRegistry& registry, const TrainConfig& config) {
  config.validate();
  if (registry.tasks.empty()) throw ValidationError("empty task registry");
  std::size_t total_episodes = 0;
  for (const Task& t : registry.tasks) total_episodes += t.train_episodes;
  const std::size_t steps = config.steps_per_epoch
                                ? config.steps_per_epoch
                                : (total_episodes + config.batch_size - 1) / config.batch_size;

  std::vector<std::vector<Parameter*>> params;
  for (Task& t : registry.tasks) params.push_back(task_parameters(model, t));
  std::vector<Parameter*> everything = model.parameters();
  for (Task& t : registry.tasks) {
    for (Parameter* p : t.head->parameters()) everything.push_back(p);
  }

  Rng rng(config.seed);
  AdamState adam;
  PlateauScheduler scheduler(config.lr, config.plateau_factor, config.plateau_patience);
  TrainResult result;
  std::vector<double> val_history;
  std::vector<Tensor> best;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::map<std::string, std::pair<double, std::size_t>> sums;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t ti = sample_task(registry, rng);
      Task& task = registry.tasks[ti];
      Batch batch = sample_batch(registry, task, config.batch_size, config.episode_length, rng);
      std::vector<const EpisodeInput*> ptrs;
      for (const auto& e : batch.episodes) ptrs.push_back(&e);
      for (Parameter* p : params[ti]) p->zero_grad();
      Tape tape;
      Var emb = model.embed_batch(tape, ptrs, Mode{true, &rng});
      Var loss = task.head->loss(tape, emb, batch.labels);
      const double value = loss.value()[0];
      if (!std::isfinite(value)) {
        throw Error("non-finite loss in task '" + task.name + "' at epoch " +
                    std::to_string(epoch) + ", step " + std::to_string(step));
      }
      tape.backward(loss);
      if (config.clip_norm > 0) clip_grad_norm(params[ti], config.clip_norm);
      adam.step(params[ti], scheduler.lr());
      auto& [sum, count] = sums[task.name];
      sum += value;
      ++count;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = scheduler.lr();
    for (const auto& [name, sc] : sums) entry.task_losses[name] = sc.first / double(sc.second);
    double val = 0;
    std::size_t counted = 0;
    for (Task& t : registry.tasks) {
      if (t.validation.empty()) continue;
      val += validation_loss(model, t, config.batch_size);
      ++counted;
    }
    if (counted) {
      val /= static_cast<double>(counted);
    } else {
      if (epoch == 1) warn("no validation episodes; selecting on training loss");
      for (const auto& [name, l] : entry.task_losses) val += l;
      val /= static_cast<double>(std::max<std::size_t>(1, entry.task_losses.size()));
    }
    if (!std::isfinite(val)) throw Error("non-finite validation loss at epoch " + std::to_string(epoch));
    entry.val_loss = val;
    val_history.push_back(val);
    if (select_best_epoch(val_history) == val_history.size() - 1) {
      best.clear();
      for (Parameter* p : everything) best.push_back(p->value);
      result.best_epoch = epoch;
      result.best_val_loss = val;
    }
    scheduler.step(val);
    result.log.push_back(std::move(entry));
  }
  for (std::size_t i = 0; i < everything.size(); ++i) everything[i]->value = best[i];
  return result;
}

void write_run_log(const std::filesystem::path& path, std::span<const EpochLog> log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const EpochLog& e : log) {
    out << json{{"epoch", e.epoch}, {"lr", e.lr}, {"task_losses", e.task_losses},
                {"val_loss", e.val_loss}}
               .dump()
        << "\n";
  }
}

std::vector<EpochLog> read_run_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read run log " + path.string());
  std::vector<EpochLog> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EpochLog e;
      e.epoch = j.at("epoch");
      e.lr = j.at("lr");
      e.val_loss = j.at("val_loss");
      e.task_losses = j.at("task_losses").get<std::map<std::string, double>>();
      out.push_back(std::move(e));
    } catch (const json::exception& ex) {
      throw ValidationError("malformed run log line in " + path.string() + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace epistyle
