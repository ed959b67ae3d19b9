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
#include <optional>
#include <string>
#include <vector>

#include "epistyle/corpus.hpp"

namespace epistyle {

struct SynthConfig {
  std::vector<std::string> markets{"agora", "nucleus"};
  std::size_t authors_per_market = 20;
  std::size_t migrants = 5;  // shared between the first two markets
  std::size_t posts_per_author = 100;
  std::size_t spam_authors = 1;  // per market, counted in authors_per_market
  double novel_fraction = 0;     // authors posting only in the later half
  std::uint64_t seed = 0;

  std::size_t pool_size = 2000;  // shared Zipf word pool
  std::size_t signature_size = 30;
  double signature_weight = 0.6;
  std::size_t min_words = 8;
  std::size_t max_words = 20;
  double migrant_drift = 0.05;  // multiplicative jitter of migrant weights

  std::size_t subforums = 12;  // per market
  std::size_t communities = 3;
  double community_affinity = 0.8;  // mass on the author's community subforums
  double thread_start_rate = 0.2;

  std::int64_t start_time = 1356998400;  // 2013-01-01T00:00:00Z
  std::size_t span_days = 364;

  // Per-post probabilities of markup that preprocessing rewrites.
  double link_rate = 0.05;
  double image_rate = 0.03;
  double quote_rate = 0.05;
  double pgp_signature_rate = 0.02;
  double pgp_message_rate = 0.01;

  void validate() const;
};

/// Generative style of one author.
struct AuthorProfile {
  std::string market;
  std::string username;
  bool spam = false;
  bool novel = false;
  std::vector<std::size_t> signature;      // pool indices
  std::vector<double> signature_weights;   // normalized
  double signature_weight = 0;
  double ellipsis_rate = 0;
  double pound_rate = 0;
  double exclaim_rate = 0;
  bool lowercase = false;
  std::vector<double> weekday;   // 7 entries, normalized
  std::vector<double> subforum;  // per subforum, normalized
  std::string pgp_key;           // armored public key block; empty if none
  std::optional<UserRef> alias;  // the same person on another market
};

struct SynthCorpus {
  std::vector<std::string> pool;  // word strings
  std::vector<double> pool_weights;
  std::vector<AuthorProfile> authors;
  std::vector<Post> posts;  // every market, each market in time order
  std::vector<MigrationLabel> labels;
};

SynthCorpus generate_corpus(const SynthConfig& config);

/// Full unigram distribution of an author over the word pool.
std::vector<double> word_distribution(const SynthCorpus& corpus, const AuthorProfile& author);
double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

/// Writes `<market>.jsonl` per market and `migration_labels.csv`.
void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus);

}  // namespace epistyle
