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

#include "epistyle/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "epistyle/csv.hpp"

namespace epistyle {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Ingestion

namespace {

std::optional<std::string> string_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
  return std::nullopt;
}

}  // namespace

LoadResult load_posts(const std::filesystem::path& path, const std::string& market) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read posts file " + path.string());
  LoadResult result;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto skip = [&](const std::string& why) {
      ++result.malformed;
      warn(path.string() + ":" + std::to_string(line_no) + ": " + why + "; line skipped");
    };
    json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (obj.is_discarded() || !obj.is_object()) {
      skip("not a JSON object");
      continue;
    }
    Post p;
    std::optional<std::string> m = market.empty() ? string_field(obj, "market") : market;
    auto subforum = string_field(obj, "subforum");
    auto thread = string_field(obj, "thread_id");
    auto post_id = string_field(obj, "post_id");
    auto author = string_field(obj, "author");
    auto body = string_field(obj, "body");
    const char* missing = !m ? "market" : !subforum ? "subforum" : !thread ? "thread_id"
                        : !post_id ? "post_id" : !author ? "author" : !body ? "body" : nullptr;
    if (missing) {
      skip(std::string("missing field '") + missing + "'");
      continue;
    }
    auto ts = obj.find("timestamp");
    if (ts == obj.end() || !ts->is_number()) {
      skip("missing field 'timestamp'");
      continue;
    }
    p.timestamp = ts->is_number_integer() ? ts->get<std::int64_t>()
                                          : static_cast<std::int64_t>(ts->get<double>());
    if (p.timestamp <= 0) {
      skip("non-positive timestamp");
      continue;
    }
    if (author->empty()) {
      skip("empty author");
      continue;
    }
    p.market = *m;
    p.subforum = *subforum;
    p.thread_id = *thread;
    p.post_id = *post_id;
    p.author = *author;
    p.body = *body;
    auto start = obj.find("is_thread_start");
    p.is_thread_start = start != obj.end() && start->is_boolean() && start->get<bool>();
    if (!seen.emplace(p.market, p.post_id).second) {
      skip("duplicate post_id '" + p.post_id + "'");
      continue;
    }
    result.posts.push_back(std::move(p));
  }
  return result;
}

void write_posts(const std::filesystem::path& path, std::span<const Post> posts) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write posts file " + path.string());
  for (const Post& p : posts) {
    json obj = {{"market", p.market},       {"subforum", p.subforum},
                {"thread_id", p.thread_id}, {"post_id", p.post_id},
                {"author", p.author},       {"timestamp", p.timestamp},
                {"is_thread_start", p.is_thread_start}, {"body", p.body}};
    out << obj.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Text normalization

const std::array<std::string_view, 6>& corpus_special_tokens() {
  static const std::array<std::string_view, 6> tokens = {
      kQuoteToken, kPgpPubkeyToken, kPgpSignatureToken,
      kPgpMessageToken, kLinkToken, kImageToken};
  return tokens;
}

PreprocessRules PreprocessRules::defaults() {
  const auto flags = std::regex::ECMAScript | std::regex::icase;
  PreprocessRules rules;
  rules.quotes.push_back({std::regex(R"(\[quote(=[^\]]*)?\])", flags),
                          std::regex(R"(\[/quote\])", flags)});
  rules.quotes.push_back({std::regex(R"(<blockquote[^>]*>)", flags),
                          std::regex(R"(</blockquote>)", flags)});
  rules.images.emplace_back(R"(\[img[^\]]*\][^\[]*\[/img\])", flags);
  rules.images.emplace_back(R"(<img[^>]*>)", flags);
  rules.images.emplace_back(R"(!\[[^\]]*\]\([^)]*\))", std::regex::ECMAScript);
  return rules;
}

const std::regex& url_pattern() {
  static const std::regex re(R"((https?://|www\.)[^\s]+)", std::regex::ECMAScript);
  return re;
}

namespace {

struct Piece {
  std::string text;
  bool special = false;
};

std::vector<Piece> split_on_specials(std::string_view text) {
  std::vector<Piece> out;
  std::size_t pos = 0, plain_start = 0;
  while (pos < text.size()) {
    bool matched = false;
    if (text[pos] == '[') {
      for (std::string_view tok : corpus_special_tokens()) {
        if (text.substr(pos, tok.size()) == tok) {
          if (pos > plain_start) out.push_back({std::string(text.substr(plain_start, pos - plain_start)), false});
          out.push_back({std::string(tok), true});
          pos += tok.size();
          plain_start = pos;
          matched = true;
          break;
        }
      }
    }
    if (!matched) ++pos;
  }
  if (plain_start < text.size()) out.push_back({std::string(text.substr(plain_start)), false});
  return out;
}

// Applies `rewrite` to every non-special piece; `rewrite` returns the new
// pieces for one plain text run.
template <typename F>
std::vector<Piece> rewrite_plain(const std::vector<Piece>& pieces, F rewrite) {
  std::vector<Piece> out;
  for (const Piece& p : pieces) {
    if (p.special) {
      out.push_back(p);
      continue;
    }
    for (Piece& q : rewrite(p.text)) {
      if (!q.special && q.text.empty()) continue;
      out.push_back(std::move(q));
    }
  }
  return out;
}

std::vector<Piece> replace_regex(const std::string& text, const std::regex& re,
                                 std::string_view token) {
  std::vector<Piece> out;
  auto begin = std::sregex_iterator(text.begin(), text.end(), re);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto pos = static_cast<std::size_t>(it->position());
    if (it->length() == 0) continue;
    out.push_back({text.substr(last, pos - last), false});
    out.push_back({std::string(token), true});
    last = pos + static_cast<std::size_t>(it->length());
  }
  out.push_back({text.substr(last), false});
  return out;
}

std::vector<Piece> replace_quotes(const std::string& text, const QuotePattern& q) {
  std::vector<Piece> out;
  std::size_t cursor = 0;   // start of pending plain text
  std::size_t search = 0;   // where to look for the next opener
  std::smatch open;
  while (search < text.size() &&
         std::regex_search(text.begin() + static_cast<std::ptrdiff_t>(search), text.end(), open, q.open)) {
    const std::size_t open_pos = search + static_cast<std::size_t>(open.position());
    std::size_t scan = open_pos + static_cast<std::size_t>(open.length());
    int depth = 1;
    std::optional<std::size_t> end;
    while (depth > 0 && scan < text.size()) {
      std::smatch o, c;
      const auto from = text.begin() + static_cast<std::ptrdiff_t>(scan);
      const bool has_o = std::regex_search(from, text.end(), o, q.open);
      const bool has_c = std::regex_search(from, text.end(), c, q.close);
      if (!has_c) break;
      if (has_o && o.position() < c.position()) {
        ++depth;
        scan += static_cast<std::size_t>(o.position() + o.length());
      } else {
        --depth;
        scan += static_cast<std::size_t>(c.position() + c.length());
        if (depth == 0) end = scan;
      }
    }
    if (!end) {
      // Unbalanced opener stays as plain text.
      search = open_pos + std::max<std::size_t>(1, static_cast<std::size_t>(open.length()));
      continue;
    }
    out.push_back({text.substr(cursor, open_pos - cursor), false});
    out.push_back({std::string(kQuoteToken), true});
    cursor = search = *end;
  }
  out.push_back({text.substr(cursor), false});
  return out;
}

struct ArmorKind {
  std::string_view begin;
  std::string_view end;
  std::string_view token;
};

constexpr ArmorKind kArmors[] = {
    {"-----BEGIN PGP PUBLIC KEY BLOCK-----", "-----END PGP PUBLIC KEY BLOCK-----", kPgpPubkeyToken},
    {"-----BEGIN PGP SIGNATURE-----", "-----END PGP SIGNATURE-----", kPgpSignatureToken},
    {"-----BEGIN PGP MESSAGE-----", "-----END PGP MESSAGE-----", kPgpMessageToken},
};

constexpr std::string_view kSignedHeader = "-----BEGIN PGP SIGNED MESSAGE-----";

// Drops the clear-signed header line and its "Hash:" armor lines.
std::string strip_signed_headers(const std::string& text) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t h = text.find(kSignedHeader, pos);
    if (h == std::string::npos) break;
    out += text.substr(pos, h - pos);
    std::size_t cur = h + kSignedHeader.size();
    if (cur < text.size() && text[cur] == '\r') ++cur;
    if (cur < text.size() && text[cur] == '\n') ++cur;
    while (cur < text.size()) {
      const std::size_t eol = text.find('\n', cur);
      const std::string line = text.substr(cur, eol == std::string::npos ? std::string::npos : eol - cur);
      const bool armor = line.rfind("Hash:", 0) == 0;
      const bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
      if (!armor && !blank) break;
      cur = eol == std::string::npos ? text.size() : eol + 1;
      if (blank) break;
    }
    pos = cur;
  }
  out += text.substr(pos);
  return out;
}

std::vector<Piece> replace_armor(const std::string& text, const ArmorKind& kind) {
  std::vector<Piece> out;
  std::size_t cursor = 0;
  while (true) {
    const std::size_t b = text.find(kind.begin, cursor);
    if (b == std::string::npos) break;
    const std::size_t e = text.find(kind.end, b + kind.begin.size());
    if (e == std::string::npos) break;
    out.push_back({text.substr(cursor, b - cursor), false});
    out.push_back({std::string(kind.token), true});
    cursor = e + kind.end.size();
  }
  out.push_back({text.substr(cursor), false});
  return out;
}

}  // namespace

std::string preprocess_text(std::string_view raw, const PreprocessRules& rules) {
  std::vector<Piece> pieces = split_on_specials(raw);
  for (const ArmorKind& kind : kArmors) {
    pieces = rewrite_plain(pieces, [&](const std::string& t) { return replace_armor(t, kind); });
  }
  pieces = rewrite_plain(pieces, [](const std::string& t) {
    return std::vector<Piece>{{strip_signed_headers(t), false}};
  });
  for (const QuotePattern& q : rules.quotes) {
    pieces = rewrite_plain(pieces, [&](const std::string& t) { return replace_quotes(t, q); });
  }
  for (const std::regex& re : rules.images) {
    pieces = rewrite_plain(pieces, [&](const std::string& t) { return replace_regex(t, re, kImageToken); });
  }
  pieces = rewrite_plain(pieces, [](const std::string& t) {
    return replace_regex(t, url_pattern(), kLinkToken);
  });
  std::string out;
  for (const Piece& p : pieces) out += p.text;
  return out;
}

// ---------------------------------------------------------------------------
// Chronological split

SplitSpec chronological_split(std::span<const Post> posts) {
  if (posts.empty()) throw ValidationError("chronological_split: no posts");
  std::vector<std::int64_t> ts;
  ts.reserve(posts.size());
  for (const Post& p : posts) ts.push_back(p.timestamp);
  std::sort(ts.begin(), ts.end());
  SplitSpec spec;
  spec.market = posts.front().market;
  spec.split_timestamp = ts[(ts.size() - 1) / 2];
  for (const Post& p : posts) {
    if (p.market != spec.market) {
      throw ValidationError("chronological_split: mixed markets '" + spec.market + "' and '" +
                            p.market + "'");
    }
    (p.timestamp <= spec.split_timestamp ? spec.train : spec.test).insert(p.post_id);
  }
  if (spec.test.empty()) {
    warn("degenerate split for market '" + spec.market + "': test side is empty");
  }
  return spec;
}

std::vector<SplitSpec> chronological_split_by_market(std::span<const Post> posts) {
  std::map<std::string, std::vector<Post>> by_market;
  for (const Post& p : posts) by_market[p.market].push_back(p);
  std::vector<SplitSpec> out;
  for (auto& [market, ps] : by_market) out.push_back(chronological_split(ps));
  return out;
}

void write_split_manifest(const std::filesystem::path& path, std::span<const SplitSpec> splits) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write split manifest " + path.string());
  out << "market,post_id,split\n";
  for (const SplitSpec& s : splits) {
    for (const auto& id : s.train) out << csv::join({s.market, id, "train"}) << '\n';
    for (const auto& id : s.test) out << csv::join({s.market, id, "test"}) << '\n';
  }
}

std::vector<SplitSpec> read_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read split manifest " + path.string());
  std::map<std::string, SplitSpec> by_market;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = csv::split(line);
    if (line_no == 1 && !fields.empty() && fields[0] == "market") continue;
    if (fields.size() != 3 || (fields[2] != "train" && fields[2] != "test")) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": expected market,post_id,train|test");
    }
    SplitSpec& s = by_market[fields[0]];
    s.market = fields[0];
    (fields[2] == "train" ? s.train : s.test).insert(fields[1]);
  }
  std::vector<SplitSpec> out;
  for (auto& [m, s] : by_market) out.push_back(std::move(s));
  return out;
}

std::vector<Post> select_split(std::span<const Post> posts, std::span<const SplitSpec> splits,
                               std::string_view side) {
  if (side != "train" && side != "test") throw ValidationError("split side must be train or test");
  std::map<std::string, const SplitSpec*> by_market;
  for (const SplitSpec& s : splits) by_market[s.market] = &s;
  std::vector<Post> out;
  for (const Post& p : posts) {
    auto it = by_market.find(p.market);
    if (it == by_market.end()) continue;
    const auto& ids = side == "train" ? it->second->train : it->second->test;
    if (ids.count(p.post_id)) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Episodes

std::vector<Episode> assemble_episodes(std::span<const Post> posts, std::size_t length,
                                       std::size_t min_episodes, EpisodeMode mode, Rng* rng) {
  if (length == 0) throw ValidationError("episode length must be at least 1");
  if (mode == EpisodeMode::kSampled && !rng) {
    throw ValidationError("sampled episode assembly requires an rng");
  }
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    groups[{posts[i].market, posts[i].author}].push_back(i);
  }
  std::vector<Episode> out;
  for (auto& [key, idx] : groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return posts[a].timestamp < posts[b].timestamp;
    });
    if (idx.size() < min_episodes * length) continue;
    const std::size_t count = idx.size() / length;
    for (std::size_t e = 0; e < count; ++e) {
      const std::size_t start = mode == EpisodeMode::kFixed
                                    ? e * length
                                    : uniform_index(*rng, idx.size() - length + 1);
      Episode ep{key.first, key.second, {}};
      ep.posts.assign(idx.begin() + static_cast<std::ptrdiff_t>(start),
                      idx.begin() + static_cast<std::ptrdiff_t>(start + length));
      out.push_back(std::move(ep));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-market labels

std::string to_string(const UserRef& u) { return u.market + ":" + u.user; }

std::optional<std::string> pgp_key_fingerprint(std::string_view block) {
  constexpr std::string_view begin = "-----BEGIN PGP PUBLIC KEY BLOCK-----";
  constexpr std::string_view end = "-----END PGP PUBLIC KEY BLOCK-----";
  const std::size_t b = block.find(begin);
  const std::size_t e = block.find(end);
  if (b == std::string_view::npos || e == std::string_view::npos || e < b) return std::nullopt;
  std::string_view body = block.substr(b + begin.size(), e - b - begin.size());
  std::string payload;
  std::istringstream lines{std::string(body)};
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find(": ") != std::string::npos) continue;  // armor header
    if (!line.empty() && line[0] == '=') continue;       // CRC-24 checksum
    for (char c : line) {
      if (c == ' ' || c == '\t') continue;
      const bool b64 = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') ||
                       (c >= '0' && c <= '9') || c == '+' || c == '/' || c == '=';
      if (!b64) return std::nullopt;
      payload += c;
    }
  }
  if (payload.size() < 16) return std::nullopt;
  return hex64(fnv1a64(payload));
}

std::vector<MigrationLabel> extract_pgp_candidate_pairs(std::span<const Post> posts) {
  constexpr std::string_view begin = "-----BEGIN PGP PUBLIC KEY BLOCK-----";
  constexpr std::string_view end = "-----END PGP PUBLIC KEY BLOCK-----";
  std::map<std::string, std::set<UserRef>> owners;
  for (const Post& p : posts) {
    std::size_t pos = 0;
    while ((pos = p.body.find(begin, pos)) != std::string::npos) {
      const std::size_t e = p.body.find(end, pos + begin.size());
      if (e == std::string::npos) {
        warn("post " + p.market + "/" + p.post_id + ": unterminated PGP key block ignored");
        break;
      }
      auto fp = pgp_key_fingerprint(std::string_view(p.body).substr(pos, e + end.size() - pos));
      if (fp) {
        owners[*fp].insert(UserRef{p.market, p.author});
      } else {
        warn("post " + p.market + "/" + p.post_id + ": malformed PGP key block ignored");
      }
      pos = e + end.size();
    }
  }
  std::map<std::pair<UserRef, UserRef>, std::string> pairs;
  for (const auto& [fp, ids] : owners) {
    for (auto a = ids.begin(); a != ids.end(); ++a) {
      for (auto b = std::next(a); b != ids.end(); ++b) {
        if (a->market == b->market) continue;
        pairs.emplace(std::make_pair(*a, *b), "pgp:" + fp);
      }
    }
  }
  std::vector<MigrationLabel> out;
  for (const auto& [pair, evidence] : pairs) {
    out.push_back(MigrationLabel{pair.first, pair.second, std::nullopt, evidence});
  }
  return out;
}

std::vector<MigrationLabel> load_migration_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read migration labels " + path.string());
  std::map<std::pair<UserRef, UserRef>, MigrationLabel> unique;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = csv::split(line);
    if (!f.empty() && f[0] == "market_a") continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (f.size() < 5) throw ValidationError(where + ": expected 5 columns");
    MigrationLabel label{{f[0], f[1]}, {f[2], f[3]}, std::nullopt, f.size() > 5 ? f[5] : ""};
    if (f[4] == "true") label.same_author = true;
    else if (f[4] == "false") label.same_author = false;
    else throw ValidationError(where + ": same_author must be true or false");
    if (label.user_a.market == label.user_b.market) {
      throw ValidationError(where + ": both users on market '" + label.user_a.market + "'");
    }
    if (label.user_b < label.user_a) std::swap(label.user_a, label.user_b);
    auto key = std::make_pair(label.user_a, label.user_b);
    auto [it, inserted] = unique.emplace(key, label);
    if (!inserted && it->second.same_author != label.same_author) {
      throw ValidationError(where + ": conflicting same_author for " + to_string(key.first) +
                            " / " + to_string(key.second));
    }
  }
  std::vector<MigrationLabel> out;
  for (auto& [k, v] : unique) out.push_back(std::move(v));
  return out;
}

void write_migration_labels(const std::filesystem::path& path,
                            std::span<const MigrationLabel> labels) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write migration labels " + path.string());
  out << "market_a,user_a,market_b,user_b,same_author,evidence\n";
  for (const MigrationLabel& l : labels) {
    const std::string same = !l.same_author ? "" : *l.same_author ? "true" : "false";
    out << csv::join({l.user_a.market, l.user_a.user, l.user_b.market, l.user_b.user, same,
                      l.evidence})
        << '\n';
  }
}

CrossDataset build_cross_dataset(std::span<const MigrationLabel> labels,
                                 std::span<const Episode> episodes) {
  std::set<UserRef> with_episodes;
  for (const Episode& e : episodes) with_episodes.insert({e.market, e.author});

  std::map<UserRef, UserRef> parent;
  std::function<UserRef(const UserRef&)> find = [&](const UserRef& u) -> UserRef {
    UserRef& p = parent.at(u);
    if (p == u) return u;
    p = find(p);
    return p;
  };
  for (const MigrationLabel& l : labels) {
    if (!l.same_author) continue;
    for (const UserRef* u : {&l.user_a, &l.user_b}) {
      if (!with_episodes.count(*u)) {
        warn("migration label references " + to_string(*u) + " which has no episodes; pair skipped");
      }
    }
    if (!with_episodes.count(l.user_a) || !with_episodes.count(l.user_b)) continue;
    parent.emplace(l.user_a, l.user_a);
    parent.emplace(l.user_b, l.user_b);
    if (*l.same_author) {
      UserRef ra = find(l.user_a), rb = find(l.user_b);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
  }
  CrossDataset ds;
  std::map<UserRef, int> root_class;
  for (auto& [user, p] : parent) {
    const UserRef root = find(user);
    auto [it, inserted] = root_class.emplace(root, static_cast<int>(root_class.size()));
    ds.class_of[user] = it->second;
  }
  ds.num_classes = root_class.size();
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    auto it = ds.class_of.find({episodes[i].market, episodes[i].author});
    if (it != ds.class_of.end()) ds.items.emplace_back(i, it->second);
  }
  return ds;
}

int weekday_utc(std::int64_t timestamp) {
  std::int64_t days = timestamp / 86400;
  if (timestamp % 86400 < 0) --days;
  // 1970-01-01 was a Thursday (Monday = 0 -> Thursday = 3).
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

}  // namespace epistyle
