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

#include "epistyle/tokenize.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "epistyle/common.hpp"
#include "epistyle/corpus.hpp"

namespace epistyle {
namespace {

std::uint64_t pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

// Splits text into runs between corpus special tokens; `on_special` receives
// the token id, `on_plain` the text in between. [PAD] and [UNK] are never
// matched in raw text.
template <typename Plain, typename Special>
void scan_specials(std::string_view text, Plain on_plain, Special on_special) {
  const auto& specials = Vocab::specials();
  std::size_t pos = 0, start = 0;
  while (pos < text.size()) {
    int hit = -1;
    if (text[pos] == '[') {
      for (std::size_t s = 2; s < specials.size(); ++s) {
        if (text.substr(pos, specials[s].size()) == specials[s]) {
          hit = static_cast<int>(s);
          break;
        }
      }
    }
    if (hit < 0) {
      ++pos;
      continue;
    }
    if (pos > start) on_plain(text.substr(start, pos - start));
    on_special(hit);
    pos += specials[static_cast<std::size_t>(hit)].size();
    start = pos;
  }
  if (start < text.size()) on_plain(text.substr(start));
}

// A chunk starts at the beginning of a run or at a space byte.
template <typename F>
void for_each_chunk(std::string_view text, F f) {
  std::size_t start = 0;
  for (std::size_t i = 1; i < text.size(); ++i) {
    if (text[i] == ' ') {
      f(text.substr(start, i - start));
      start = i;
    }
  }
  if (start < text.size()) f(text.substr(start));
}

std::string escape(std::string_view s) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : s) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c <= 0x20 || c >= 0x7f || c == '#') {
      out += "\\x";
      out += hex[c >> 4];
      out += hex[c & 0xF];
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (i + 1 < s.size() && s[i + 1] == '\\') {
      out += '\\';
      ++i;
    } else if (i + 3 < s.size() && s[i + 1] == 'x') {
      out += static_cast<char>(std::stoi(std::string(s.substr(i + 2, 2)), nullptr, 16));
      i += 3;
    } else {
      throw ValidationError("vocab file: bad escape in '" + std::string(s) + "'");
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(VocabKind kind) { return kind == VocabKind::kChar ? "char" : "bpe"; }

VocabKind parse_vocab_kind(std::string_view text) {
  if (text == "char") return VocabKind::kChar;
  if (text == "bpe") return VocabKind::kBpe;
  throw ValidationError("unknown tokenizer kind '" + std::string(text) + "' (char|bpe)");
}

const std::vector<std::string>& Vocab::specials() {
  static const std::vector<std::string> s = [] {
    std::vector<std::string> v = {"[PAD]", "[UNK]"};
    for (std::string_view t : corpus_special_tokens()) v.emplace_back(t);
    return v;
  }();
  return s;
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 0;
    bool valid = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; valid && k < len; ++k) {
      valid = (static_cast<unsigned char>(text[i + k]) >> 6) == 0x2;
    }
    if (!valid) len = 1;
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

Vocab Vocab::with_specials(VocabKind kind) {
  Vocab v;
  v.kind_ = kind;
  v.tokens_ = specials();
  return v;
}

void Vocab::add_token(std::string token) {
  piece_ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

void Vocab::index() {
  piece_ids_.clear();
  merge_rank_.clear();
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) {
    piece_ids_.emplace(tokens_[i], static_cast<int>(i));
  }
  if (kind_ == VocabKind::kBpe) {
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const auto& [a, b] = merges_[r];
      auto ia = piece_ids_.find(a), ib = piece_ids_.find(b), ic = piece_ids_.find(a + b);
      if (ia == piece_ids_.end() || ib == piece_ids_.end() || ic == piece_ids_.end()) {
        throw ValidationError("vocab: merge " + std::to_string(r) + " references unknown tokens");
      }
      merge_rank_.emplace(pair_key(ia->second, ib->second),
                          std::make_pair(static_cast<int>(r), ic->second));
    }
  }
}

void Vocab::encode_chunk(std::string_view chunk, std::vector<int>& out) const {
  std::vector<int> syms;
  syms.reserve(chunk.size());
  for (unsigned char c : chunk) syms.push_back(static_cast<int>(kNumSpecials) + c);
  while (syms.size() > 1) {
    int best_rank = -1, best_id = -1;
    std::pair<int, int> best_pair;
    for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
      auto it = merge_rank_.find(pair_key(syms[i], syms[i + 1]));
      if (it != merge_rank_.end() && (best_rank < 0 || it->second.first < best_rank)) {
        best_rank = it->second.first;
        best_id = it->second.second;
        best_pair = {syms[i], syms[i + 1]};
      }
    }
    if (best_rank < 0) break;
    std::vector<int> merged;
    merged.reserve(syms.size());
    for (std::size_t i = 0; i < syms.size();) {
      if (i + 1 < syms.size() && syms[i] == best_pair.first && syms[i + 1] == best_pair.second) {
        merged.push_back(best_id);
        i += 2;
      } else {
        merged.push_back(syms[i++]);
      }
    }
    syms.swap(merged);
  }
  out.insert(out.end(), syms.begin(), syms.end());
}

void Vocab::encode_plain(std::string_view text, std::vector<int>& out) const {
  if (kind_ == VocabKind::kChar) {
    for (const std::string& ch : utf8_chars(text)) {
      auto it = piece_ids_.find(ch);
      out.push_back(it == piece_ids_.end() ? kUnkId : it->second);
    }
  } else {
    for_each_chunk(text, [&](std::string_view chunk) { encode_chunk(chunk, out); });
  }
}

std::vector<int> Vocab::encode(std::string_view text) const {
  std::vector<int> out;
  scan_specials(
      text, [&](std::string_view plain) { encode_plain(plain, out); },
      [&](int special) { out.push_back(special); });
  return out;
}

std::string Vocab::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocab " + path.string());
  out << to_string(kind_) << ' ' << tokens_.size() << '\n';
  for (const std::string& t : tokens_) out << escape(t) << '\n';
  if (kind_ == VocabKind::kBpe) {
    out << "#MERGES\n";
    for (const auto& [a, b] : merges_) out << escape(a) << ' ' << escape(b) << '\n';
  }
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocab " + path.string());
  std::string kind;
  std::size_t size = 0;
  if (!(in >> kind >> size)) throw ValidationError("vocab " + path.string() + ": bad header");
  Vocab v;
  v.kind_ = parse_vocab_kind(kind);
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < size; ++i) {
    if (!std::getline(in, line)) throw ValidationError("vocab " + path.string() + ": truncated");
    v.tokens_.push_back(unescape(line));
  }
  if (v.tokens_.size() < kNumSpecials ||
      !std::equal(specials().begin(), specials().end(), v.tokens_.begin())) {
    throw ValidationError("vocab " + path.string() + ": special tokens missing or reordered");
  }
  if (v.kind_ == VocabKind::kBpe) {
    if (!std::getline(in, line) || line != "#MERGES") {
      throw ValidationError("vocab " + path.string() + ": missing #MERGES section");
    }
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto sp = line.find(' ');
      if (sp == std::string::npos) throw ValidationError("vocab " + path.string() + ": bad merge line");
      v.merges_.emplace_back(unescape(line.substr(0, sp)), unescape(line.substr(sp + 1)));
    }
  }
  v.index();
  return v;
}

Vocab train_char_vocab(std::span<const std::string> texts, std::size_t size) {
  if (size < Vocab::kNumSpecials) {
    throw ValidationError("char vocab size " + std::to_string(size) + " is below the " +
                          std::to_string(Vocab::kNumSpecials) + " reserved special tokens");
  }
  if (texts.empty()) throw ValidationError("char vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const std::string& text : texts) {
    scan_specials(
        text,
        [&](std::string_view plain) {
          for (const std::string& ch : utf8_chars(plain)) ++freq[ch];
        },
        [](int) {});
  }
  // Code point order equals byte order for valid UTF-8, so ordering by the
  // string keeps ties deterministic.
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v = Vocab::with_specials(VocabKind::kChar);
  for (const auto& [ch, count] : ranked) {
    if (v.size() >= size) break;
    v.add_token(ch);
  }
  v.index();
  return v;
}

Vocab train_bpe(std::span<const std::string> texts, std::size_t size) {
  const std::size_t base = Vocab::kNumSpecials + 256;
  if (size < base) {
    throw ValidationError("bpe vocab size " + std::to_string(size) + " is below the " +
                          std::to_string(base) + " base symbols");
  }
  if (texts.empty()) throw ValidationError("bpe: empty corpus");
  Vocab v = Vocab::with_specials(VocabKind::kBpe);
  for (int b = 0; b < 256; ++b) v.add_token(std::string(1, static_cast<char>(b)));

  std::map<std::string, std::int64_t> word_freq;
  for (const std::string& text : texts) {
    scan_specials(
        text,
        [&](std::string_view plain) {
          for_each_chunk(plain, [&](std::string_view w) { ++word_freq[std::string(w)]; });
        },
        [](int) {});
  }
  std::vector<std::vector<int>> words;
  std::vector<std::int64_t> freq;
  for (const auto& [w, f] : word_freq) {
    std::vector<int> syms;
    for (unsigned char c : w) syms.push_back(static_cast<int>(Vocab::kNumSpecials) + c);
    words.push_back(std::move(syms));
    freq.push_back(f);
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::set<std::size_t>> where;
  const auto& toks = v.tokens_;
  // Highest count first, then lexicographic (left, right) token strings.
  auto cmp = [&toks](const std::tuple<std::int64_t, int, int>& x,
                     const std::tuple<std::int64_t, int, int>& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    const auto& xl = toks[static_cast<std::size_t>(std::get<1>(x))];
    const auto& yl = toks[static_cast<std::size_t>(std::get<1>(y))];
    if (xl != yl) return xl < yl;
    return toks[static_cast<std::size_t>(std::get<2>(x))] <
           toks[static_cast<std::size_t>(std::get<2>(y))];
  };
  std::set<std::tuple<std::int64_t, int, int>, decltype(cmp)> queue(cmp);

  auto adjust = [&](int a, int b, std::int64_t delta) {
    const std::uint64_t key = pair_key(a, b);
    std::int64_t& c = counts[key];
    if (c > 0) queue.erase({c, a, b});
    c += delta;
    if (c > 0) queue.insert({c, a, b});
  };
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (std::size_t i = 0; i + 1 < words[w].size(); ++i) {
      adjust(words[w][i], words[w][i + 1], freq[w]);
      where[pair_key(words[w][i], words[w][i + 1])].insert(w);
    }
  }

  while (v.size() < size && !queue.empty()) {
    const auto [count, a, b] = *queue.begin();
    const int merged_id = static_cast<int>(v.size());
    v.merges_.emplace_back(v.tokens_[static_cast<std::size_t>(a)],
                           v.tokens_[static_cast<std::size_t>(b)]);
    std::string merged = v.tokens_[static_cast<std::size_t>(a)] + v.tokens_[static_cast<std::size_t>(b)];
    v.tokens_.push_back(std::move(merged));
    const std::set<std::size_t> affected = where[pair_key(a, b)];
    for (std::size_t w : affected) {
      std::vector<int>& syms = words[w];
      bool present = false;
      for (std::size_t i = 0; i + 1 < syms.size() && !present; ++i) {
        present = syms[i] == a && syms[i + 1] == b;
      }
      if (!present) continue;
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) adjust(syms[i], syms[i + 1], -freq[w]);
      std::vector<int> next;
      for (std::size_t i = 0; i < syms.size();) {
        if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
          next.push_back(merged_id);
          i += 2;
        } else {
          next.push_back(syms[i++]);
        }
      }
      syms.swap(next);
      for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
        adjust(syms[i], syms[i + 1], freq[w]);
        where[pair_key(syms[i], syms[i + 1])].insert(w);
      }
    }
  }
  if (v.size() < size) {
    warn("bpe: corpus exhausted after " + std::to_string(v.merges_.size()) + " merges; vocabulary has " +
         std::to_string(v.size()) + " of " + std::to_string(size) + " tokens");
  }
  v.index();
  return v;
}

}  // namespace epistyle
