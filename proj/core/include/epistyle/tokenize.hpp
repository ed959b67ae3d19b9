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
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace epistyle {

enum class VocabKind { kChar, kBpe };

std::string_view to_string(VocabKind kind);
VocabKind parse_vocab_kind(std::string_view text);

/// Token vocabulary. Ids are dense: [PAD]=0, [UNK]=1, then the six corpus
/// special tokens, then characters (char) or the 256 bytes followed by one
/// token per merge (bpe). Special tokens are always matched atomically.
class Vocab {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;
  static constexpr std::size_t kNumSpecials = 8;

  /// [PAD], [UNK], then the corpus special tokens.
  static const std::vector<std::string>& specials();

  VocabKind kind() const { return kind_; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend Vocab train_char_vocab(std::span<const std::string> texts, std::size_t size);
  friend Vocab train_bpe(std::span<const std::string> texts, std::size_t size);

 private:
  Vocab() = default;
  static Vocab with_specials(VocabKind kind);
  void index();
  void add_token(std::string token);
  void encode_plain(std::string_view text, std::vector<int>& out) const;
  void encode_chunk(std::string_view chunk, std::vector<int>& out) const;

  VocabKind kind_ = VocabKind::kChar;
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::string, int> piece_ids_;  // non-special tokens
  std::unordered_map<std::uint64_t, std::pair<int, int>> merge_rank_;  // pair -> (rank, id)
};

/// Keeps the `size - 8` most frequent characters (ties by code point);
/// everything else encodes as [UNK].
Vocab train_char_vocab(std::span<const std::string> texts, std::size_t size = 1000);

/// Byte-level BPE: 256 byte symbols plus greedy most-frequent-pair merges
/// (ties by lexicographic pair order) until the vocabulary holds `size`
/// tokens or no pair remains. Words carry their leading space byte.
Vocab train_bpe(std::span<const std::string> texts, std::size_t size = 30000);

/// Splits UTF-8 text into code point strings; invalid bytes stand alone.
std::vector<std::string> utf8_chars(std::string_view text);

}  // namespace epistyle
