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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "epistyle/common.hpp"

namespace epistyle {

/// One forum message.
struct Post {
  std::string market;
  std::string subforum;
  std::string thread_id;
  std::string post_id;  // unique within its market
  std::string author;
  std::int64_t timestamp = 0;  // seconds since epoch, UTC
  bool is_thread_start = false;
  std::string body;
};

/// L consecutive posts by one author on one market. `posts` indexes into the
/// post list the episode was assembled from, in ascending time order.
struct Episode {
  std::string market;
  std::string author;
  std::vector<std::size_t> posts;
};

// ---------------------------------------------------------------------------
// Ingestion

struct LoadResult {
  std::vector<Post> posts;
  std::size_t malformed = 0;
};

/// Reads JSONL posts. Lines missing a required field (or with a duplicate
/// post id) are skipped with a warning. A non-empty `market` overrides the
/// per-line market field.
LoadResult load_posts(const std::filesystem::path& path, const std::string& market = {});

void write_posts(const std::filesystem::path& path, std::span<const Post> posts);

// ---------------------------------------------------------------------------
// Text normalization

inline constexpr std::string_view kQuoteToken = "[QUOTE]";
inline constexpr std::string_view kPgpPubkeyToken = "[PGP PUBKEY]";
inline constexpr std::string_view kPgpSignatureToken = "[PGP SIGNATURE]";
inline constexpr std::string_view kPgpMessageToken = "[PGP ENCMSG]";
inline constexpr std::string_view kLinkToken = "[LINK]";
inline constexpr std::string_view kImageToken = "[IMAGE]";

/// The six corpus special tokens in canonical order.
const std::array<std::string_view, 6>& corpus_special_tokens();

/// Opening/closing markup of a quoted post; nesting is balanced.
struct QuotePattern {
  std::regex open;
  std::regex close;
};

/// Forum-specific markup. Defaults cover BBCode and HTML quote/image markup.
struct PreprocessRules {
  std::vector<QuotePattern> quotes;
  std::vector<std::regex> images;

  static PreprocessRules defaults();
};

/// Matches URLs: (https?://|www\.)[^\s]+
const std::regex& url_pattern();

/// Replaces PGP armor blocks, quoted posts, image markup and links with
/// their special tokens. Idempotent: text already containing special tokens
/// is only rewritten between them.
std::string preprocess_text(std::string_view raw,
                            const PreprocessRules& rules = PreprocessRules::defaults());

// ---------------------------------------------------------------------------
// Chronological split

struct SplitSpec {
  std::string market;
  std::int64_t split_timestamp = 0;
  std::set<std::string> train;  // post ids
  std::set<std::string> test;
};

/// Median split of one market's posts: timestamp <= lower median goes to
/// train. Throws on empty input; warns when the test side is empty.
SplitSpec chronological_split(std::span<const Post> posts);

/// Splits each market independently; result ordered by market name.
std::vector<SplitSpec> chronological_split_by_market(std::span<const Post> posts);

/// CSV `market,post_id,split`.
void write_split_manifest(const std::filesystem::path& path, std::span<const SplitSpec> splits);
std::vector<SplitSpec> read_split_manifest(const std::filesystem::path& path);

/// Posts on the requested side ("train" or "test") of the splits.
std::vector<Post> select_split(std::span<const Post> posts, std::span<const SplitSpec> splits,
                               std::string_view side);

// ---------------------------------------------------------------------------
// Episodes

enum class EpisodeMode { kFixed, kSampled };

/// Groups posts per (market, author) in time order. Fixed mode emits
/// consecutive non-overlapping windows (trailing remainder dropped); sampled
/// mode draws the same number of random contiguous windows. Authors with
/// fewer than min_episodes * L posts are skipped.
std::vector<Episode> assemble_episodes(std::span<const Post> posts, std::size_t length,
                                       std::size_t min_episodes = 2,
                                       EpisodeMode mode = EpisodeMode::kFixed,
                                       Rng* rng = nullptr);

// ---------------------------------------------------------------------------
// Cross-market labels

struct UserRef {
  std::string market;
  std::string user;
  auto operator<=>(const UserRef&) const = default;
};

std::string to_string(const UserRef& u);

struct MigrationLabel {
  UserRef user_a;
  UserRef user_b;
  std::optional<bool> same_author;  // unset for unreviewed candidates
  std::string evidence;
};

/// Fingerprint of a PGP public key block: FNV-1a of the base64 payload with
/// whitespace, armor headers and the checksum line removed. Empty when the
/// block is malformed.
std::optional<std::string> pgp_key_fingerprint(std::string_view armored_block);

/// Pairs identities on different markets that posted the same public key.
/// Operates on raw (unprocessed) bodies. Output sorted and de-duplicated.
std::vector<MigrationLabel> extract_pgp_candidate_pairs(std::span<const Post> posts);

/// CSV `market_a,user_a,market_b,user_b,same_author[,evidence]`; header row
/// optional. Duplicates collapse; conflicting duplicates throw.
std::vector<MigrationLabel> load_migration_labels(const std::filesystem::path& path);
void write_migration_labels(const std::filesystem::path& path,
                            std::span<const MigrationLabel> labels);

/// Episodes relabeled by identity cluster.
struct CrossDataset {
  std::map<UserRef, int> class_of;
  std::size_t num_classes = 0;
  // (index into the episode list, class)
  std::vector<std::pair<std::size_t, int>> items;
};

/// Union-find over same-author pairs; users of distinct pairs that join no
/// cluster become singletons. Pairs naming a user without episodes are
/// skipped with a warning.
CrossDataset build_cross_dataset(std::span<const MigrationLabel> labels,
                                 std::span<const Episode> episodes);

// ---------------------------------------------------------------------------
// Helpers

/// Day of week of a UTC timestamp, Monday = 0.
int weekday_utc(std::int64_t timestamp);

}  // namespace epistyle
