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


#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "epistyle/synth.hpp"
#include "test_util.hpp"

using namespace epistyle;
using epistyle::testing::read_file;
using epistyle::testing::TempDir;

namespace {

const SynthCorpus& default_corpus() {
  static const SynthCorpus corpus = [] {
    SynthConfig c;
    c.seed = 42;
    return generate_corpus(c);
  }();
  return corpus;
}

const AuthorProfile& profile(const SynthCorpus& c, const UserRef& u) {
  for (const auto& a : c.authors)
    if (a.market == u.market && a.username == u.user) return a;
  FAIL("no profile for " << to_string(u));
  throw;
}

}  // namespace

TEST_CASE("corpus size and labels") {
  const auto& c = default_corpus();
  CHECK(c.posts.size() == 4000);
  REQUIRE(c.labels.size() == 5);
  for (const auto& l : c.labels) {
    CHECK(l.same_author == true);
    CHECK(l.user_a.market != l.user_b.market);
  }
}

TEST_CASE("posts satisfy the post invariants") {
  const auto& c = default_corpus();
  std::set<std::pair<std::string, std::string>> ids;
  std::map<std::string, std::int64_t> last;
  for (const Post& p : c.posts) {
    CHECK(ids.insert({p.market, p.post_id}).second);
    CHECK(p.timestamp > 0);
    CHECK_FALSE(p.author.empty());
    CHECK_FALSE(p.subforum.empty());
    CHECK(p.timestamp >= last[p.market]);
    last[p.market] = p.timestamp;
  }
}

TEST_CASE("every special-token trigger occurs") {
  std::map<std::string, std::size_t> seen;
  for (const Post& p : default_corpus().posts) {
    const std::string text = preprocess_text(p.body);
    for (auto tok : corpus_special_tokens())
      if (text.find(tok) != std::string::npos) ++seen[std::string(tok)];
  }
  for (auto tok : corpus_special_tokens()) CHECK_MESSAGE(seen[std::string(tok)] > 0, tok);
}

TEST_CASE("migrants share a style, other authors do not") {
  const auto& c = default_corpus();
  std::set<std::pair<std::string, std::string>> paired;
  for (const auto& l : c.labels) {
    const auto& a = profile(c, l.user_a);
    const auto& b = profile(c, l.user_b);
    CHECK(tv_distance(word_distribution(c, a), word_distribution(c, b)) < 0.05);
    paired.insert({a.market, a.username});
    paired.insert({b.market, b.username});
  }
  std::size_t checked = 0;
  for (std::size_t i = 0; i < c.authors.size(); ++i) {
    for (std::size_t j = i + 1; j < c.authors.size(); ++j) {
      const auto& a = c.authors[i];
      const auto& b = c.authors[j];
      if (paired.count({a.market, a.username}) && paired.count({b.market, b.username})) continue;
      CHECK(tv_distance(word_distribution(c, a), word_distribution(c, b)) > 0.3);
      ++checked;
    }
  }
  CHECK(checked > 700);
}

TEST_CASE("migrants post the same PGP key on both markets") {
  const auto& c = default_corpus();
  const auto pairs = extract_pgp_candidate_pairs(c.posts);
  for (const auto& l : c.labels) {
    CHECK(std::any_of(pairs.begin(), pairs.end(), [&](const MigrationLabel& p) {
      return (p.user_a == l.user_a && p.user_b == l.user_b) ||
             (p.user_a == l.user_b && p.user_b == l.user_a);
    }));
  }
}

TEST_CASE("spam and novel archetypes") {
  SynthConfig cfg;
  cfg.seed = 7;
  cfg.novel_fraction = 0.3;
  cfg.spam_authors = 2;
  const auto c = generate_corpus(cfg);
  std::size_t spam = 0, novel = 0;
  for (const auto& a : c.authors) {
    spam += a.spam;
    novel += a.novel;
  }
  CHECK(spam == 4);
  CHECK(novel > 0);
  const std::int64_t mid = cfg.start_time + static_cast<std::int64_t>(cfg.span_days / 2) * 86400;
  for (const Post& p : c.posts) {
    for (const auto& a : c.authors) {
      if (a.novel && a.market == p.market && a.username == p.author) CHECK(p.timestamp >= mid - 7 * 86400);
    }
  }
}

TEST_CASE("generation is bitwise reproducible and labels round-trip") {
  TempDir a("synth_a"), b("synth_b");
  SynthConfig cfg;
  cfg.seed = 5;
  cfg.posts_per_author = 30;
  write_synth_corpus(a.path(), generate_corpus(cfg));
  write_synth_corpus(b.path(), generate_corpus(cfg));
  for (const char* f : {"agora.jsonl", "nucleus.jsonl", "migration_labels.csv"})
    CHECK(read_file(a / f) == read_file(b / f));
  const auto corpus = generate_corpus(cfg);
  const auto labels = load_migration_labels(a / "migration_labels.csv");
  REQUIRE(labels.size() == corpus.labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CHECK(labels[i].user_a == corpus.labels[i].user_a);
    CHECK(labels[i].user_b == corpus.labels[i].user_b);
    CHECK(labels[i].same_author == corpus.labels[i].same_author);
    CHECK(labels[i].evidence == corpus.labels[i].evidence);
  }
  const auto loaded = load_posts(a / "agora.jsonl").posts;
  CHECK(loaded.size() == 20 * 30);
  cfg.seed = 6;
  TempDir d("synth_d");
  write_synth_corpus(d.path(), generate_corpus(cfg));
  CHECK(read_file(a / "agora.jsonl") != read_file(d / "agora.jsonl"));
}

TEST_CASE("inconsistent configurations are rejected") {
  SynthConfig c;
  c.migrants = 25;
  CHECK_THROWS_AS(generate_corpus(c), ValidationError);
  c = SynthConfig{};
  c.markets = {"only"};
  CHECK_THROWS_AS(generate_corpus(c), ValidationError);
  c = SynthConfig{};
  c.communities = 20;
  CHECK_THROWS_AS(generate_corpus(c), ValidationError);
}
