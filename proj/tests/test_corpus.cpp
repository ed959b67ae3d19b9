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
#include <random>
#include <regex>
#include <set>

#include "epistyle/corpus.hpp"
#include "test_util.hpp"

using namespace epistyle;
using epistyle::testing::make_post;
using epistyle::testing::TempDir;
using epistyle::testing::WarningCapture;
using epistyle::testing::write_file;

namespace {

std::string post_line(const std::string& id, const std::string& author, long ts) {
  return R"({"market":"m","subforum":"s","thread_id":"t","post_id":")" + id +
         R"(","author":")" + author + R"(","timestamp":)" + std::to_string(ts) +
         R"(,"is_thread_start":false,"body":"b"})";
}

const char* kKey =
    "-----BEGIN PGP PUBLIC KEY BLOCK-----\n"
    "Version: GnuPG v1\n"
    "\n"
    "mQENBFKx0xkBCADJ3hY7Q2yJqQ9Yt4f0cUuW8a1l\n"
    "=abcd\n"
    "-----END PGP PUBLIC KEY BLOCK-----";

const char* kOtherKey =
    "-----BEGIN PGP PUBLIC KEY BLOCK-----\n"
    "\n"
    "mQINBFZZZZZZZZZZZZZZZZZZZZZZZZZZZZZZZZ\n"
    "-----END PGP PUBLIC KEY BLOCK-----";

std::vector<std::int64_t> timestamps_of(std::span<const Post> posts,
                                        const std::set<std::string>& ids) {
  std::vector<std::int64_t> out;
  for (const Post& p : posts)
    if (ids.count(p.post_id)) out.push_back(p.timestamp);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("load_posts") {
  TempDir dir("load");
  SUBCASE("three valid lines") {
    write_file(dir / "p.jsonl", post_line("1", "a", 10) + "\n" + post_line("2", "a", 11) + "\n" +
                                    post_line("3", "b", 12) + "\n");
    const LoadResult r = load_posts(dir / "p.jsonl");
    REQUIRE(r.posts.size() == 3);
    CHECK(r.malformed == 0);
    CHECK(r.posts[2].author == "b");
    CHECK(r.posts[1].timestamp == 11);
  }
  SUBCASE("empty file gives no posts and no warnings") {
    write_file(dir / "p.jsonl", "");
    WarningCapture w;
    CHECK(load_posts(dir / "p.jsonl").posts.empty());
    CHECK(w.messages.empty());
  }
  SUBCASE("a line missing its author is skipped with one warning") {
    std::string bad = post_line("3", "x", 12);
    bad.replace(bad.find(R"("author":"x",)"), std::string(R"("author":"x",)").size(), "");
    write_file(dir / "p.jsonl", post_line("1", "a", 10) + "\n" + bad + "\n" +
                                    post_line("2", "b", 11) + "\n");
    WarningCapture w;
    const LoadResult r = load_posts(dir / "p.jsonl");
    CHECK(r.posts.size() == 2);
    CHECK(r.malformed == 1);
    REQUIRE(w.messages.size() == 1);
    CHECK(w.messages[0].find("author") != std::string::npos);
  }
  SUBCASE("market override and duplicate ids") {
    write_file(dir / "p.jsonl", post_line("1", "a", 10) + "\n" + post_line("1", "b", 11) + "\n");
    WarningCapture w;
    const LoadResult r = load_posts(dir / "p.jsonl", "agora");
    REQUIRE(r.posts.size() == 1);
    CHECK(r.posts[0].market == "agora");
    CHECK(r.malformed == 1);
  }
  SUBCASE("unreadable file is an error") {
    CHECK_THROWS_AS(load_posts(dir / "missing.jsonl"), Error);
  }
  SUBCASE("write then load round-trips") {
    std::vector<Post> posts{make_post("m", "a", 5, "p1", "line\n\"quoted\" \xc2\xa3"),
                            make_post("m", "b", 6, "p2", "x", "s1", "t1", true)};
    write_posts(dir / "out.jsonl", posts);
    const auto back = load_posts(dir / "out.jsonl").posts;
    REQUIRE(back.size() == 2);
    CHECK(back[0].body == posts[0].body);
    CHECK(back[1].is_thread_start);
    CHECK(back[1].subforum == "s1");
  }
}

TEST_CASE("preprocess_text replacements") {
  CHECK(preprocess_text(kKey) == "[PGP PUBKEY]");
  CHECK(preprocess_text("plain words only") == "plain words only");
  CHECK(preprocess_text("see http://x.onion/ab now") == "see [LINK] now");
  CHECK(preprocess_text("go www.example.com") == "go [LINK]");
  CHECK(preprocess_text("-----BEGIN PGP SIGNATURE-----\nabc\n-----END PGP SIGNATURE-----") ==
        "[PGP SIGNATURE]");
  CHECK(preprocess_text("a -----BEGIN PGP MESSAGE-----\nabc\n-----END PGP MESSAGE----- b") ==
        "a [PGP ENCMSG] b");
  CHECK(preprocess_text("x [quote=bob]hi [quote]nested[/quote] there[/quote] y") ==
        "x [QUOTE] y");
  CHECK(preprocess_text("pic [img]http://a/b.png[/img]!") == "pic [IMAGE]!");
  CHECK(preprocess_text("<img src=\"a.png\"> ok") == "[IMAGE] ok");
}

TEST_CASE("preprocess_text link replacement agrees with a regex oracle") {
  const std::regex oracle(R"((https?://|www\.)[^\s]+)");
  const std::vector<std::string> samples{
      "a http://foo.bar/x?y=1 b", "https://q", "www.z.onion", "nohttp here",
      "two http://a http://b", "tab\thttp://x\tend", "http:/broken"};
  for (const auto& s : samples) {
    CHECK(preprocess_text(s) == std::regex_replace(s, oracle, "[LINK]"));
  }
}

TEST_CASE("preprocess_text is idempotent on generated text") {
  const std::vector<std::string> parts{
      "word", " ", "\n", "http://x.y/z", "[quote]q[/quote]", "[img]u[/img]", kKey,
      "-----BEGIN PGP SIGNATURE-----\nsig\n-----END PGP SIGNATURE-----", "[LINK]", "£", "...",
      "<blockquote>b</blockquote>", "[quote]", "[/quote]"};
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const std::size_t n = 1 + uniform_index(rng, 12);
    for (std::size_t i = 0; i < n; ++i) text += parts[uniform_index(rng, parts.size())];
    const std::string once = preprocess_text(text);
    CHECK(preprocess_text(once) == once);
  }
}

TEST_CASE("custom quote markup rules") {
  PreprocessRules rules;
  rules.quotes.push_back({std::regex(R"(<<)"), std::regex(R"(>>)")});
  CHECK(preprocess_text("a << quoted >> b", rules) == "a [QUOTE] b");
  CHECK(preprocess_text("a [quote]x[/quote] b", rules) == "a [quote]x[/quote] b");
}

TEST_CASE("chronological_split") {
  auto posts_at = [](std::initializer_list<std::int64_t> ts) {
    std::vector<Post> posts;
    int i = 0;
    for (auto t : ts) posts.push_back(make_post("m", "a", t, "p" + std::to_string(i++)));
    return posts;
  };
  SUBCASE("even count") {
    const auto posts = posts_at({3, 1, 4, 2});
    const SplitSpec s = chronological_split(posts);
    CHECK(timestamps_of(posts, s.train) == std::vector<std::int64_t>{1, 2});
    CHECK(timestamps_of(posts, s.test) == std::vector<std::int64_t>{3, 4});
  }
  SUBCASE("singleton warns") {
    const auto posts = posts_at({5});
    WarningCapture w;
    const SplitSpec s = chronological_split(posts);
    CHECK(s.train.size() == 1);
    CHECK(s.test.empty());
    CHECK(w.messages.size() == 1);
  }
  SUBCASE("ties at the median go to train") {
    const auto posts = posts_at({1, 1, 9, 1});
    const SplitSpec s = chronological_split(posts);
    CHECK(timestamps_of(posts, s.train) == std::vector<std::int64_t>{1, 1, 1});
    CHECK(timestamps_of(posts, s.test) == std::vector<std::int64_t>{9});
  }
  SUBCASE("empty input is an error") {
    CHECK_THROWS(chronological_split(std::vector<Post>{}));
  }
  SUBCASE("distinct timestamps: train precedes test and sizes differ by at most one") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Post> posts;
      std::set<std::int64_t> used;
      const std::size_t n = 1 + uniform_index(rng, 40);
      while (posts.size() < n) {
        const auto t = static_cast<std::int64_t>(1 + uniform_index(rng, 1000));
        if (used.insert(t).second)
          posts.push_back(make_post("m", "a", t, "p" + std::to_string(posts.size())));
      }
      WarningCapture w;
      const SplitSpec s = chronological_split(posts);
      const auto tr = timestamps_of(posts, s.train);
      const auto te = timestamps_of(posts, s.test);
      CHECK(tr.size() + te.size() == n);
      CHECK(tr.size() >= te.size());
      CHECK(tr.size() - te.size() <= 1);
      if (!te.empty()) CHECK(tr.back() < te.front());
      CHECK(tr.back() <= s.split_timestamp);
    }
  }
}

TEST_CASE("split manifest round-trips and selects sides") {
  TempDir dir("split");
  std::vector<Post> posts{make_post("a", "u", 1, "1"), make_post("a", "u", 2, "2"),
                          make_post("b", "v", 5, "1"), make_post("b", "v", 7, "2")};
  const auto splits = chronological_split_by_market(posts);
  REQUIRE(splits.size() == 2);
  write_split_manifest(dir / "split.csv", splits);
  const auto back = read_split_manifest(dir / "split.csv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].train == splits[0].train);
  CHECK(back[1].test == splits[1].test);
  const auto test = select_split(posts, back, "test");
  REQUIRE(test.size() == 2);
  CHECK(test[0].timestamp == 2);
  CHECK(test[1].timestamp == 7);
}

TEST_CASE("assemble_episodes") {
  auto author_posts = [](std::size_t n) {
    std::vector<Post> posts;
    for (std::size_t i = 0; i < n; ++i)
      posts.push_back(make_post("m", "a", static_cast<std::int64_t>(100 - i), std::to_string(i)));
    return posts;
  };
  SUBCASE("10 posts, L=5") {
    const auto posts = author_posts(10);
    const auto eps = assemble_episodes(posts, 5);
    REQUIRE(eps.size() == 2);
    for (const auto& e : eps) {
      CHECK(e.posts.size() == 5);
      for (std::size_t i = 1; i < e.posts.size(); ++i)
        CHECK(posts[e.posts[i - 1]].timestamp < posts[e.posts[i]].timestamp);
    }
  }
  SUBCASE("9 posts, L=5 is excluded") { CHECK(assemble_episodes(author_posts(9), 5, 2).empty()); }
  SUBCASE("5 posts, L=1") { CHECK(assemble_episodes(author_posts(5), 1).size() == 5); }
  SUBCASE("fixed windows never share posts") {
    Rng rng(3);
    std::vector<Post> posts;
    for (int i = 0; i < 400; ++i)
      posts.push_back(make_post(i % 2 ? "m1" : "m2", "u" + std::to_string(uniform_index(rng, 9)),
                                static_cast<std::int64_t>(1 + uniform_index(rng, 5000)),
                                std::to_string(i)));
    for (std::size_t L = 1; L <= 9; ++L) {
      std::set<std::size_t> used;
      for (const auto& e : assemble_episodes(posts, L)) {
        CHECK(e.posts.size() == L);
        for (auto i : e.posts) {
          CHECK(used.insert(i).second);
          CHECK(posts[i].author == e.author);
          CHECK(posts[i].market == e.market);
        }
      }
    }
  }
  SUBCASE("sampled windows are contiguous and seeded") {
    const auto posts = author_posts(23);
    Rng a(9), b(9);
    const auto ea = assemble_episodes(posts, 5, 2, EpisodeMode::kSampled, &a);
    const auto eb = assemble_episodes(posts, 5, 2, EpisodeMode::kSampled, &b);
    REQUIRE(ea.size() == 4);
    for (std::size_t i = 0; i < ea.size(); ++i) CHECK(ea[i].posts == eb[i].posts);
  }
}

TEST_CASE("weekday_utc") {
  CHECK(weekday_utc(0) == 3);              // 1970-01-01, Thursday
  CHECK(weekday_utc(1356998400) == 1);     // 2013-01-01, Tuesday
  CHECK(weekday_utc(1356998400 + 7 * 86400 + 3600) == 1);
}

TEST_CASE("PGP candidate pairs") {
  SUBCASE("same key across markets pairs once") {
    std::vector<Post> posts{make_post("M1", "alice", 1, "1", std::string("my key ") + kKey),
                            make_post("M2", "alicia", 2, "1", kKey),
                            make_post("M2", "alicia", 3, "2", kKey)};
    const auto pairs = extract_pgp_candidate_pairs(posts);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].user_a == UserRef{"M1", "alice"});
    CHECK(pairs[0].user_b == UserRef{"M2", "alicia"});
    CHECK_FALSE(pairs[0].same_author.has_value());
  }
  SUBCASE("same market gives nothing") {
    std::vector<Post> posts{make_post("M1", "alice", 1, "1", kKey),
                            make_post("M1", "alice2", 2, "2", kKey)};
    CHECK(extract_pgp_candidate_pairs(posts).empty());
  }
  SUBCASE("a key posted once gives nothing") {
    std::vector<Post> posts{make_post("M1", "alice", 1, "1", kKey),
                            make_post("M2", "bob", 2, "1", kOtherKey)};
    CHECK(extract_pgp_candidate_pairs(posts).empty());
  }
  SUBCASE("fingerprint ignores armor headers, whitespace and checksum") {
    const std::string reflowed =
        "-----BEGIN PGP PUBLIC KEY BLOCK-----\n\nmQENBFKx0xkBCADJ3hY7\n  Q2yJqQ9Yt4f0cUuW8a1l\n"
        "=zzzz\n-----END PGP PUBLIC KEY BLOCK-----";
    CHECK(pgp_key_fingerprint(kKey) == pgp_key_fingerprint(reflowed));
    CHECK(pgp_key_fingerprint(kKey) != pgp_key_fingerprint(kOtherKey));
  }
  SUBCASE("malformed block is ignored with a warning") {
    std::vector<Post> posts{make_post(
        "M1", "a", 1, "1",
        "-----BEGIN PGP PUBLIC KEY BLOCK-----\n###\n-----END PGP PUBLIC KEY BLOCK-----")};
    WarningCapture w;
    CHECK(extract_pgp_candidate_pairs(posts).empty());
    CHECK(w.messages.size() == 1);
  }
}

TEST_CASE("migration labels") {
  TempDir dir("labels");
  SUBCASE("33 positive rows") {
    std::string csv = "market_a,user_a,market_b,user_b,same_author\n";
    for (int i = 0; i < 33; ++i)
      csv += "agora,u" + std::to_string(i) + ",nucleus,v" + std::to_string(i) + ",true\n";
    write_file(dir / "l.csv", csv);
    const auto labels = load_migration_labels(dir / "l.csv");
    CHECK(labels.size() == 33);
    CHECK(std::all_of(labels.begin(), labels.end(),
                      [](const MigrationLabel& l) { return l.same_author == true; }));
  }
  SUBCASE("empty file") {
    write_file(dir / "l.csv", "");
    CHECK(load_migration_labels(dir / "l.csv").empty());
  }
  SUBCASE("duplicates collapse") {
    write_file(dir / "l.csv", "a,x,b,y,true\na,x,b,y,true\n");
    CHECK(load_migration_labels(dir / "l.csv").size() == 1);
  }
  SUBCASE("conflicting duplicate is an error") {
    write_file(dir / "l.csv", "a,x,b,y,true\na,x,b,y,false\n");
    CHECK_THROWS(load_migration_labels(dir / "l.csv"));
  }
  SUBCASE("write then load round-trips") {
    std::vector<MigrationLabel> labels{{{"a", "x"}, {"b", "y"}, true, "pgp:1"},
                                       {{"a", "p,q"}, {"c", "r"}, false, ""}};
    write_migration_labels(dir / "l.csv", labels);
    const auto back = load_migration_labels(dir / "l.csv");
    REQUIRE(back.size() == 2);
    for (const auto& l : labels) {
      CHECK(std::any_of(back.begin(), back.end(), [&](const MigrationLabel& b) {
        return b.user_a == l.user_a && b.user_b == l.user_b && b.same_author == l.same_author &&
               b.evidence == l.evidence;
      }));
    }
  }
}

TEST_CASE("build_cross_dataset") {
  std::vector<Episode> episodes{{"A", "a", {0}}, {"B", "b", {1}}, {"C", "c", {2}},
                                {"A", "a", {3}}, {"B", "z", {4}}};
  auto label = [](std::string ma, std::string a, std::string mb, std::string b, bool same) {
    return MigrationLabel{{ma, a}, {mb, b}, same, ""};
  };
  SUBCASE("transitive pairs join one class") {
    std::vector<MigrationLabel> labels{label("A", "a", "B", "b", true),
                                       label("B", "b", "C", "c", true)};
    const auto ds = build_cross_dataset(labels, episodes);
    CHECK(ds.num_classes == 1);
    CHECK(ds.items.size() == 4);
    CHECK(ds.class_of.at({"A", "a"}) == ds.class_of.at({"C", "c"}));
  }
  SUBCASE("distinct pair gives two singletons") {
    const auto ds = build_cross_dataset(std::vector{label("A", "a", "B", "b", false)}, episodes);
    CHECK(ds.num_classes == 2);
    CHECK(ds.class_of.at({"A", "a"}) != ds.class_of.at({"B", "b"}));
  }
  SUBCASE("no labels") {
    const auto ds = build_cross_dataset(std::vector<MigrationLabel>{}, episodes);
    CHECK(ds.num_classes == 0);
    CHECK(ds.items.empty());
  }
  SUBCASE("unknown user is skipped with a warning") {
    WarningCapture w;
    const auto ds = build_cross_dataset(std::vector{label("A", "a", "D", "ghost", true)}, episodes);
    CHECK(ds.num_classes == 0);
    CHECK(w.messages.size() == 1);
  }
  SUBCASE("random label sets: classes partition the labeled users") {
    Rng rng(4);
    const std::vector<UserRef> users{{"A", "a"}, {"B", "b"}, {"C", "c"}, {"B", "z"}};
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<MigrationLabel> labels;
      for (int i = 0; i < 3; ++i) {
        const auto& x = users[uniform_index(rng, 4)];
        const auto& y = users[uniform_index(rng, 4)];
        if (x.market != y.market) labels.push_back({x, y, uniform01(rng) < 0.6, ""});
      }
      const auto ds = build_cross_dataset(labels, episodes);
      // Oracle: two users share a class iff connected by true pairs.
      std::map<UserRef, std::set<UserRef>> reach;
      for (const auto& [u, c] : ds.class_of) reach[u] = {u};
      for (int round = 0; round < 4; ++round)
        for (const auto& l : labels)
          if (*l.same_author) {
            auto merged = reach[l.user_a];
            merged.insert(reach[l.user_b].begin(), reach[l.user_b].end());
            for (const auto& u : merged) reach[u] = merged;
          }
      for (const auto& [u, cu] : ds.class_of)
        for (const auto& [v, cv] : ds.class_of) CHECK((cu == cv) == (reach[u].count(v) > 0));
      std::set<std::size_t> seen;
      for (const auto& [idx, cls] : ds.items) {
        CHECK(seen.insert(idx).second);
        CHECK(static_cast<std::size_t>(cls) < ds.num_classes);
      }
    }
  }
}
