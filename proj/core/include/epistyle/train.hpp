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
#include <vector>

#include "epistyle/corpus.hpp"
#include "epistyle/model.hpp"
#include "epistyle/tokenize.hpp"

namespace epistyle {

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t epochs = 30;
  double lr = 1e-3;
  double plateau_factor = 0.5;
  std::size_t plateau_patience = 5;
  double val_fraction = 0.1;
  std::size_t episode_length = 5;
  double p_cross = 0.01;
  double clip_norm = 5.0;
  // 0 derives ceil(total training episodes / batch size).
  std::size_t steps_per_epoch = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr const char* kCrossTaskName = "cross";

/// One metric-learning task: a market's authors, or the cross-market
/// identity clusters.
struct Task {
  std::string name;
  bool cross = false;
  std::vector<std::string> markets;  // whose context tables the task trains
  std::size_t num_classes = 0;

  /// Training posts of one identity, in time order (validation episodes
  /// removed). Indices refer to TaskRegistry::inputs.
  struct Stream {
    std::string market;
    std::string author;
    int label = 0;
    std::vector<std::size_t> posts;
    std::size_t episodes = 0;  // floor(posts / L)
  };
  std::vector<Stream> streams;
  std::size_t train_episodes = 0;

  std::vector<EpisodeInput> validation;
  std::vector<int> validation_labels;

  std::unique_ptr<MetricHead> head;
};

/// Tasks over a shared set of model inputs. Market tasks come first in
/// market-name order; the cross task, if any, is last.
struct TaskRegistry {
  std::vector<PostInput> inputs;
  std::vector<std::string> input_market;
  std::vector<Task> tasks;
  double p_cross = 0;

  std::size_t market_task_count() const;
  Task* cross_task();
  Task& find(const std::string& name);
};

/// Builds one task per listed market from training posts, plus the cross
/// task when `labels` yields at least one cross-market cluster and
/// config.p_cross > 0. The model must already know every market.
TaskRegistry build_registry(EpisodeModel& model, const Vocab& vocab, std::span<const Post> posts,
                            std::span<const std::string> markets,
                            std::span<const MigrationLabel> labels, const HeadConfig& head,
                            const TrainConfig& config);

/// Cross task with probability p_cross; otherwise a market task with
/// probability proportional to its training episode count.
std::size_t sample_task(const TaskRegistry& registry, Rng& rng);

struct Batch {
  std::vector<EpisodeInput> episodes;
  std::vector<int> labels;
};

/// N random contiguous windows; identities are drawn proportionally to
/// their episode counts, windows uniformly within the identity's stream.
Batch sample_batch(const TaskRegistry& registry, const Task& task, std::size_t n,
                   std::size_t length, Rng& rng);

struct EpochLog {
  std::size_t epoch = 0;
  std::map<std::string, double> task_losses;  // mean training loss per task
  double val_loss = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
};

/// Mean validation loss of a task in eval mode (batches of batch_size).
double validation_loss(EpisodeModel& model, Task& task, std::size_t batch_size);

/// Trains the model and all task heads; leaves the parameters of the epoch
/// with the lowest task-averaged validation loss (earliest on ties).
/// Single-market training is a registry with one task.
TrainResult train(EpisodeModel& model, TaskRegistry& registry, const TrainConfig& config);

/// Index of the minimal value, earliest on ties.
std::size_t select_best_epoch(std::span<const double> val_losses);

/// One JSON object per line: {epoch, lr, task_losses, val_loss}.
void write_run_log(const std::filesystem::path& path, std::span<const EpochLog> log);
std::vector<EpochLog> read_run_log(const std::filesystem::path& path);

}  // namespace epistyle
