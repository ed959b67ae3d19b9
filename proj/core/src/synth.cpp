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

#include "epistyle/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <tuple>

namespace epistyle {
namespace {

constexpr const char* kSyllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "de", "po",
                                      "ga", "xo", "bu", "fi", "ze", "ha", "jo", "qu", "we", "yi",
                                      "an", "el", "or", "us", "ith", "ost", "ar", "en"};
constexpr const char* kTopics[] = {"cannabis", "stimulants", "opioids", "psychedelics",
                                   "benzos",   "digital",    "fraud",   "security",
                                   "vendors",  "reviews",    "newbies", "offtopic"};
constexpr const char* kSpamLines[] = {"hi all new here", "looking for a good vendor",
                                      "can someone help me", "first post hello"};
constexpr const char* kBase64 =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

// Cumulative-sum sampler; draws are reproducible across standard libraries.
class Categorical {
 public:
  explicit Categorical(const std::vector<double>& weights) {
    double acc = 0;
    for (double w : weights) cumulative_.push_back(acc += w);
  }
  std::size_t operator()(Rng& rng) const {
    const double u = uniform01(rng) * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                                 cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

void normalize(std::vector<double>& w) {
  double s = 0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
}

std::string make_word(Rng& rng, std::size_t syllables) {
  std::string w;
  for (std::size_t i = 0; i < syllables; ++i) w += kSyllables[uniform_index(rng, std::size(kSyllables))];
  return w;
}

std::string random_base64(Rng& rng, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += kBase64[uniform_index(rng, 64)];
  return s;
}

std::string make_pgp_key(Rng& rng) {
  std::string block = "-----BEGIN PGP PUBLIC KEY BLOCK-----\nVersion: GnuPG v2\n\n";
  for (int line = 0; line < 4; ++line) block += random_base64(rng, 64) + "\n";
  block += "=" + random_base64(rng, 4) + "\n-----END PGP PUBLIC KEY BLOCK-----";
  return block;
}

std::string subforum_name(std::size_t s) {
  const std::size_t n = std::size(kTopics);
  std::string name = kTopics[s % n];
  if (s >= n) name += "-" + std::to_string(s / n + 1);
  return name;
}

// Peaked random distribution over n outcomes.
std::vector<double> peaked(Rng& rng, std::size_t n, double power) {
  std::vector<double> w(n);
  for (double& v : w) v = std::pow(uniform01(rng), power) + 1e-3;
  normalize(w);
  return w;
}

struct Draft {
  std::size_t author;
  std::int64_t timestamp;
  std::size_t subforum;
  std::string body;
};

std::string compose_body(const SynthConfig& c, const SynthCorpus& corpus, const AuthorProfile& a,
                         const Categorical& pool_sampler, const Categorical& sig_sampler,
                         Rng& rng) {
  if (a.spam) {
    std::string body = kSpamLines[uniform_index(rng, std::size(kSpamLines))];
    body += uniform01(rng) < 0.5 ? "!!" : " thanks";
    return body;
  }
  const std::size_t words = c.min_words + uniform_index(rng, c.max_words - c.min_words + 1);
  std::string body;
  std::size_t since_stop = 0;
  bool capitalize = !a.lowercase;
  for (std::size_t i = 0; i < words; ++i) {
    std::string w = uniform01(rng) < a.signature_weight
                        ? corpus.pool[a.signature[sig_sampler(rng)]]
                        : corpus.pool[pool_sampler(rng)];
    if (capitalize) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
    capitalize = false;
    if (!body.empty()) body += ' ';
    body += w;
    if (++since_stop >= 5 && uniform01(rng) < 0.3 && i + 1 < words) {
      body += uniform01(rng) < a.ellipsis_rate ? "..." : uniform01(rng) < a.exclaim_rate ? "!" : ".";
      since_stop = 0;
      capitalize = !a.lowercase;
    }
  }
  body += uniform01(rng) < a.ellipsis_rate ? "..." : uniform01(rng) < a.exclaim_rate ? "!" : ".";
  if (uniform01(rng) < a.pound_rate) {
    body += " \xC2\xA3" + std::to_string(10 * (1 + uniform_index(rng, 50)));
  }
  if (uniform01(rng) < c.quote_rate) {
    body = "[quote=someone]" + corpus.pool[pool_sampler(rng)] + " " +
           corpus.pool[pool_sampler(rng)] + "?[/quote] " + body;
  }
  if (uniform01(rng) < c.link_rate) {
    body += " http://" + corpus.pool[pool_sampler(rng)] + ".onion/" +
            std::to_string(uniform_index(rng, 1000));
  }
  if (uniform01(rng) < c.image_rate) {
    body += " [img]http://img.onion/" + std::to_string(uniform_index(rng, 1000)) + ".jpg[/img]";
  }
  if (uniform01(rng) < c.pgp_message_rate) {
    body += "\n-----BEGIN PGP MESSAGE-----\n\n" + random_base64(rng, 64) +
            "\n-----END PGP MESSAGE-----";
  }
  if (uniform01(rng) < c.pgp_signature_rate) {
    body = "-----BEGIN PGP SIGNED MESSAGE-----\nHash: SHA256\n\n" + body +
           "\n-----BEGIN PGP SIGNATURE-----\n\n" + random_base64(rng, 64) +
           "\n-----END PGP SIGNATURE-----";
  }
  return body;
}

}  // namespace

void SynthConfig::validate() const {
  if (markets.empty()) throw ValidationError("synth needs at least one market");
  if (std::set<std::string>(markets.begin(), markets.end()).size() != markets.size()) {
    throw ValidationError("duplicate market names");
  }
  if (authors_per_market == 0 || posts_per_author == 0) {
    throw ValidationError("authors and posts per author must be positive");
  }
  if (migrants > authors_per_market) throw ValidationError("more migrants than authors");
  if (migrants > 0 && markets.size() < 2) throw ValidationError("migrants need two markets");
  if (spam_authors + migrants > authors_per_market) {
    throw ValidationError("spam authors and migrants exceed authors per market");
  }
  if (!(novel_fraction >= 0 && novel_fraction < 1)) {
    throw ValidationError("novel fraction must lie in [0, 1)");
  }
  if (signature_size == 0 || pool_size < signature_size + 100) {
    throw ValidationError("word pool too small for the signature size");
  }
  if (min_words == 0 || max_words < min_words) throw ValidationError("bad word count range");
  if (subforums == 0 || communities == 0 || communities > subforums) {
    throw ValidationError("need 1 <= communities <= subforums");
  }
  if (span_days < 14) throw ValidationError("date span must cover two weeks");
  for (double p : {signature_weight, community_affinity, thread_start_rate, link_rate, image_rate,
                   quote_rate, pgp_signature_rate, pgp_message_rate, migrant_drift}) {
    if (!(p >= 0 && p <= 1)) throw ValidationError("rates must lie in [0, 1]");
  }
}

std::vector<double> word_distribution(const SynthCorpus& corpus, const AuthorProfile& a) {
  std::vector<double> p(corpus.pool.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = (1 - a.signature_weight) * corpus.pool_weights[i];
  for (std::size_t k = 0; k < a.signature.size(); ++k) {
    p[a.signature[k]] += a.signature_weight * a.signature_weights[k];
  }
  return p;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ValidationError("distributions differ in support");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return s / 2;
}

SynthCorpus generate_corpus(const SynthConfig& c) {
  c.validate();
  SynthCorpus corpus;
  Rng rng(mix_seed(c.seed, fnv1a64("synth")));

  std::set<std::string> seen_words;
  while (corpus.pool.size() < c.pool_size) {
    std::string w = make_word(rng, 1 + uniform_index(rng, 3));
    if (seen_words.insert(w).second) corpus.pool.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < c.pool_size; ++i) corpus.pool_weights.push_back(1.0 / double(i + 1));
  normalize(corpus.pool_weights);

  // Profiles. Usernames are unique per market.
  std::set<std::string> names;
  auto fresh_name = [&](const std::string& market) {
    for (;;) {
      std::string n = make_word(rng, 2) + std::to_string(10 + uniform_index(rng, 90));
      if (names.insert(market + "\t" + n).second) return n;
    }
  };
  auto new_profile = [&](const std::string& market, bool spam) {
    AuthorProfile a;
    a.market = market;
    a.username = fresh_name(market);
    a.spam = spam;
    const std::size_t sig = spam ? 5 : c.signature_size;
    std::set<std::size_t> chosen;
    // Signature words come from beyond the head of the Zipf pool.
    while (chosen.size() < sig) chosen.insert(100 + uniform_index(rng, c.pool_size - 100));
    a.signature.assign(chosen.begin(), chosen.end());
    a.signature_weights = peaked(rng, sig, 2.0);
    a.signature_weight = spam ? 0.9 : c.signature_weight;
    a.ellipsis_rate = uniform01(rng) < 0.3 ? 0.6 : 0.02;
    a.pound_rate = uniform01(rng) < 0.2 ? 0.5 : 0.01;
    a.exclaim_rate = uniform01(rng) < 0.3 ? 0.5 : 0.05;
    a.lowercase = uniform01(rng) < 0.3;
    a.weekday = peaked(rng, 7, 3.0);
    const std::size_t community = uniform_index(rng, c.communities);
    std::vector<double> aff(c.subforums, (1 - c.community_affinity) / double(c.subforums));
    std::vector<double> own = peaked(rng, c.subforums, 2.0);
    double own_mass = 0;
    for (std::size_t s = 0; s < c.subforums; ++s) {
      if (s % c.communities == community) own_mass += own[s];
    }
    for (std::size_t s = 0; s < c.subforums; ++s) {
      if (s % c.communities == community) aff[s] += c.community_affinity * own[s] / own_mass;
    }
    a.subforum = std::move(aff);
    if (spam) {
      a.subforum.assign(c.subforums, 0.0);
      a.subforum[(std::size(kTopics) - 2) % c.subforums] = 1.0;  // the newbies board
    }
    a.novel = !spam && uniform01(rng) < c.novel_fraction;
    if (uniform01(rng) < 0.5) a.pgp_key = make_pgp_key(rng);
    return a;
  };

  std::vector<std::vector<std::size_t>> by_market(c.markets.size());
  for (std::size_t m = 0; m < c.markets.size(); ++m) {
    for (std::size_t i = 0; i < c.authors_per_market; ++i) {
      const bool migrant_copy = m == 1 && i < c.migrants;
      AuthorProfile a;
      if (migrant_copy) {
        // Same person: copied style with slightly jittered word weights and
        // the same public key, under a fresh name.
        const std::size_t home_index = by_market[0][i];
        a = corpus.authors[home_index];
        a.market = c.markets[1];
        a.username = fresh_name(a.market);
        for (double& w : a.signature_weights) {
          w *= 1 + c.migrant_drift * (2 * uniform01(rng) - 1);
        }
        normalize(a.signature_weights);
        if (a.pgp_key.empty()) a.pgp_key = make_pgp_key(rng);
        corpus.authors[home_index].pgp_key = a.pgp_key;
        a.alias = UserRef{c.markets[0], corpus.authors[home_index].username};
        corpus.authors[home_index].alias = UserRef{a.market, a.username};
        corpus.labels.push_back({{c.markets[0], corpus.authors[home_index].username},
                                 {a.market, a.username},
                                 true,
                                 "planted"});
      } else {
        const bool spam = i >= c.authors_per_market - c.spam_authors;
        a = new_profile(c.markets[m], spam);
      }
      by_market[m].push_back(corpus.authors.size());
      corpus.authors.push_back(std::move(a));
    }
  }
  std::sort(corpus.labels.begin(), corpus.labels.end(), [](const auto& x, const auto& y) {
    return std::tie(x.user_a, x.user_b) < std::tie(y.user_a, y.user_b);
  });

  const std::size_t weeks = c.span_days / 7;
  const int weekday0 = weekday_utc(c.start_time);
  for (std::size_t m = 0; m < c.markets.size(); ++m) {
    Rng mrng(mix_seed(c.seed, fnv1a64(c.markets[m])));
    const Categorical pool_sampler(corpus.pool_weights);
    std::vector<Draft> drafts;
    for (std::size_t ai : by_market[m]) {
      const AuthorProfile& a = corpus.authors[ai];
      const Categorical sig_sampler(a.signature_weights);
      const Categorical day_sampler(a.weekday);
      const Categorical sub_sampler(a.subforum);
      const std::size_t first_week = a.novel ? weeks / 2 : 0;
      for (std::size_t k = 0; k < c.posts_per_author; ++k) {
        const std::size_t week = first_week + uniform_index(mrng, weeks - first_week);
        const std::size_t day = static_cast<std::size_t>(day_sampler(mrng));
        const std::size_t offset = week * 7 + (day + 7 - static_cast<std::size_t>(weekday0)) % 7;
        const std::int64_t ts = c.start_time + static_cast<std::int64_t>(offset) * 86400 +
                                static_cast<std::int64_t>(uniform_index(mrng, 86400));
        std::string body = compose_body(c, corpus, a, pool_sampler, sig_sampler, mrng);
        if (k == 0 && !a.pgp_key.empty()) body += "\nmy key:\n" + a.pgp_key;
        drafts.push_back({ai, ts, sub_sampler(mrng), std::move(body)});
      }
    }
    std::stable_sort(drafts.begin(), drafts.end(),
                     [](const Draft& x, const Draft& y) { return x.timestamp < y.timestamp; });
    std::vector<std::vector<std::string>> threads(c.subforums);
    std::size_t thread_count = 0;
    for (std::size_t i = 0; i < drafts.size(); ++i) {
      Draft& d = drafts[i];
      Post p;
      p.market = c.markets[m];
      p.subforum = subforum_name(d.subforum);
      p.author = corpus.authors[d.author].username;
      p.timestamp = d.timestamp;
      p.post_id = "p" + std::to_string(i);
      auto& open = threads[d.subforum];
      if (open.empty() || uniform01(mrng) < c.thread_start_rate) {
        open.push_back("t" + std::to_string(thread_count++));
        p.thread_id = open.back();
        p.is_thread_start = true;
      } else {
        // Replies go to one of the most recent threads of the board.
        const std::size_t recent = std::min<std::size_t>(open.size(), 8);
        p.thread_id = open[open.size() - 1 - uniform_index(mrng, recent)];
      }
      p.body = std::move(d.body);
      corpus.posts.push_back(std::move(p));
    }
  }
  return corpus;
}

void write_synth_corpus(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::vector<Post>> by_market;
  for (const Post& p : corpus.posts) by_market[p.market].push_back(p);
  for (const auto& [market, posts] : by_market) write_posts(dir / (market + ".jsonl"), posts);
  write_migration_labels(dir / "migration_labels.csv", corpus.labels);
}

}  // namespace epistyle
