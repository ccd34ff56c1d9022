// Copyright 2026 The stackens Authors.
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

#include "stackens/common.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace stackens::tokenizer {

enum class BpeMode { char_level, byte_level };

inline const char* to_string(BpeMode m) { return m == BpeMode::byte_level ? "byte" : "char"; }

inline BpeMode mode_from_string(std::string_view s) {
  if (s == "byte") return BpeMode::byte_level;
  if (s == "char") return BpeMode::char_level;
  throw Error("tokenizer", "unknown BPE mode '" + std::string(s) + "' (expected char or byte)");
}

/// Fixed ids of the special tokens; they occupy the start of every vocabulary.
struct SpecialIds {
  static constexpr int pad = 0;
  static constexpr int unknown = 1;
  static constexpr int sos = 2;
  static constexpr int cls = 3;
  static constexpr int mask = 4;
  static constexpr int count = 5;
};

inline constexpr std::string_view kSpecialNames[SpecialIds::count] = {"<pad>", "<unk>", "<sos>", "<cls>", "<mask>"};
inline constexpr std::string_view kReplacementChar = "\xEF\xBF\xBD";

/// Exactly `ids.size()` ids; `attention_mask` is a run of 1s followed by 0s
/// and the padded tail holds the pad id.
struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> attention_mask;

  std::size_t length() const { return ids.size(); }
  std::size_t valid_length() const {
    std::size_t n = 0;
    while (n < attention_mask.size() && attention_mask[n]) ++n;
    return n;
  }
  bool operator==(const TokenSequence&) const = default;
};

namespace detail {

/// Splits text into pre-tokenization chunks: each chunk is its leading
/// whitespace followed by one run of non-whitespace. Concatenating the chunks
/// gives back the input byte for byte.
inline std::vector<std::string_view> chunks(std::string_view text) {
  std::vector<std::string_view> out;
  const auto space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && space(text[i])) ++i;
    while (i < text.size() && !space(text[i])) ++i;
    out.push_back(text.substr(start, i - start));
  }
  return out;
}

inline std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

/// Base symbols of a chunk: bytes, or UTF-8 code points (a malformed byte is
/// its own symbol).
inline std::vector<std::string> base_symbols(std::string_view chunk, BpeMode mode) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < chunk.size();) {
    std::size_t len = mode == BpeMode::byte_level ? 1 : utf8_length(static_cast<unsigned char>(chunk[i]));
    if (i + len > chunk.size()) len = 1;
    for (std::size_t k = 1; k < len; ++k)
      if ((static_cast<unsigned char>(chunk[i + k]) & 0xC0) != 0x80) len = 1;
    out.emplace_back(chunk.substr(i, len));
    i += len;
  }
  return out;
}

inline std::string escape_symbol(std::string_view s) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c > 0x20 && c < 0x7F) {
      out.push_back(static_cast<char>(c));
    } else {
      out += "\\x";
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xF]);
    }
  }
  return out;
}

inline std::string unescape_symbol(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    require(i + 1 < s.size(), "tokenizer", "bad escape in symbol");
    if (s[i + 1] == '\\') {
      out.push_back('\\');
      ++i;
      continue;
    }
    require(s[i + 1] == 'x' && i + 3 < s.size(), "tokenizer", "bad escape in symbol");
    out.push_back(static_cast<char>(std::stoi(std::string(s.substr(i + 2, 2)), nullptr, 16)));
    i += 3;
  }
  return out;
}

inline std::uint64_t pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

}  // namespace detail

/// A trained subword vocabulary: base alphabet plus learned merges.
class BpeModel {
 public:
  BpeModel() = default;

  BpeMode mode() const { return mode_; }
  std::size_t vocab_size() const { return symbols_.size(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  /// Symbol for an id; specials return their bracketed name.
  const std::string& symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }
  std::size_t alphabet_size() const { return alphabet_size_; }

  /// Id of a non-special symbol, or -1.
  int find(const std::string& symbol) const {
    const auto it = ids_.find(symbol);
    return it == ids_.end() ? -1 : it->second;
  }

  /// Ids of `text` without special tokens or length limits.
  std::vector<int> encode_body(std::string_view text) const {
    std::vector<int> out;
    for (const auto chunk : detail::chunks(text)) {
      auto symbols = detail::base_symbols(chunk, mode_);
      std::vector<int> ids;
      ids.reserve(symbols.size());
      for (const auto& s : symbols) {
        const int id = find(s);
        ids.push_back(id < 0 ? SpecialIds::unknown : id);
      }
      apply_merges(ids);
      out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
  }

  /// Start token, body, then truncation to `max_len` or right padding.
  TokenSequence encode(std::string_view text, std::size_t max_len) const {
    require(max_len >= 2, "tokenizer", "sequence length must be at least 2");
    TokenSequence seq;
    seq.ids.assign(max_len, SpecialIds::pad);
    seq.attention_mask.assign(max_len, 0);
    seq.ids[0] = SpecialIds::sos;
    seq.attention_mask[0] = 1;
    const auto body = encode_body(text);
    const std::size_t n = std::min(body.size(), max_len - 1);
    for (std::size_t i = 0; i < n; ++i) {
      seq.ids[i + 1] = body[i];
      seq.attention_mask[i + 1] = 1;
    }
    return seq;
  }

  /// Concatenates symbols, skipping pad/sos/cls. Unknown ids become U+FFFD.
  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      require(id >= 0 && static_cast<std::size_t>(id) < symbols_.size(), "tokenizer", "invalid token id " + std::to_string(id));
      if (id == SpecialIds::pad || id == SpecialIds::sos || id == SpecialIds::cls) continue;
      if (id == SpecialIds::unknown) {
        out += kReplacementChar;
        continue;
      }
      out += symbols_[static_cast<std::size_t>(id)];
    }
    return out;
  }

  std::string decode(const TokenSequence& s) const { return decode(s.ids); }

  void save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "tokenizer", "cannot write '" + path.string() + "'");
    f << serialize();
  }

  /// Text container: header, one merge pair per line, then `symbol<TAB>id`
  /// for every non-special id. Symbols are escaped (\\, \xHH) so that they
  /// hold no whitespace.
  std::string serialize() const {
    std::ostringstream f;
    f << "stackens-bpe v1\n";
    f << "mode " << to_string(mode_) << "\n";
    f << "specials " << SpecialIds::count << "\n";
    f << "alphabet " << alphabet_size_ << "\n";
    f << "merges " << merges_.size() << "\n";
    f << "vocab " << symbols_.size() << "\n";
    for (const auto& [a, b] : merges_) f << detail::escape_symbol(a) << ' ' << detail::escape_symbol(b) << '\n';
    for (std::size_t id = SpecialIds::count; id < symbols_.size(); ++id)
      f << detail::escape_symbol(symbols_[id]) << '\t' << id << '\n';
    return f.str();
  }

  static BpeModel deserialize(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line, key;
    const auto expect = [&](const char* name) {
      require(static_cast<bool>(std::getline(in, line)), "tokenizer", std::string("truncated model, expected ") + name);
      std::istringstream ls(line);
      std::string value;
      ls >> key >> value;
      require(key == name, "tokenizer", std::string("expected '") + name + "' line, got '" + line + "'");
      return value;
    };
    require(std::getline(in, line) && line == "stackens-bpe v1", "tokenizer", "not a stackens BPE model");
    BpeModel m;
    m.mode_ = mode_from_string(expect("mode"));
    require(std::stoul(expect("specials")) == SpecialIds::count, "tokenizer", "special token count mismatch");
    m.alphabet_size_ = std::stoul(expect("alphabet"));
    const std::size_t n_merges = std::stoul(expect("merges"));
    const std::size_t n_vocab = std::stoul(expect("vocab"));
    for (std::size_t i = 0; i < n_merges; ++i) {
      require(static_cast<bool>(std::getline(in, line)), "tokenizer", "truncated merge list");
      const auto sp = line.find(' ');
      require(sp != std::string::npos, "tokenizer", "malformed merge line '" + line + "'");
      m.merges_.emplace_back(detail::unescape_symbol(line.substr(0, sp)), detail::unescape_symbol(line.substr(sp + 1)));
    }
    m.symbols_.assign(n_vocab, std::string());
    for (int s = 0; s < SpecialIds::count; ++s) m.symbols_[static_cast<std::size_t>(s)] = std::string(kSpecialNames[s]);
    for (std::size_t i = SpecialIds::count; i < n_vocab; ++i) {
      require(static_cast<bool>(std::getline(in, line)), "tokenizer", "truncated vocabulary");
      const auto tab = line.find('\t');
      require(tab != std::string::npos, "tokenizer", "malformed vocab line '" + line + "'");
      const std::size_t id = std::stoul(line.substr(tab + 1));
      require(id == i, "tokenizer", "vocabulary ids must be contiguous");
      m.symbols_[id] = detail::unescape_symbol(line.substr(0, tab));
    }
    m.rebuild_index();
    return m;
  }

  static BpeModel load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), "tokenizer", "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return deserialize(ss.str());
  }

  bool operator==(const BpeModel& o) const {
    return mode_ == o.mode_ && merges_ == o.merges_ && symbols_ == o.symbols_ && alphabet_size_ == o.alphabet_size_;
  }

 private:
  friend BpeModel train_bpe(std::span<const std::string>, std::size_t, BpeMode, std::uint64_t);

  void rebuild_index() {
    ids_.clear();
    for (std::size_t id = SpecialIds::count; id < symbols_.size(); ++id) ids_.emplace(symbols_[id], static_cast<int>(id));
    merge_rank_.clear();
    merge_result_.clear();
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const int a = find(merges_[r].first), b = find(merges_[r].second);
      const int ab = find(merges_[r].first + merges_[r].second);
      require(a >= 0 && b >= 0 && ab >= 0, "tokenizer", "merge refers to a symbol missing from the vocabulary");
      merge_rank_.emplace(detail::pair_key(a, b), static_cast<int>(r));
      merge_result_.emplace(detail::pair_key(a, b), ab);
    }
  }

  // Repeatedly merges the adjacent pair with the lowest learned rank.
  void apply_merges(std::vector<int>& ids) const {
    while (ids.size() > 1) {
      int best_rank = -1;
      std::uint64_t best_key = 0;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        const auto key = detail::pair_key(ids[i], ids[i + 1]);
        const auto it = merge_rank_.find(key);
        if (it != merge_rank_.end() && (best_rank < 0 || it->second < best_rank)) {
          best_rank = it->second;
          best_key = key;
        }
      }
      if (best_rank < 0) return;
      const int merged = merge_result_.at(best_key);
      std::vector<int> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && detail::pair_key(ids[i], ids[i + 1]) == best_key) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids.swap(next);
    }
  }

  BpeMode mode_ = BpeMode::byte_level;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::vector<std::string> symbols_;
  std::size_t alphabet_size_ = 0;
  std::unordered_map<std::string, int> ids_;
  std::unordered_map<std::uint64_t, int> merge_rank_;
  std::unordered_map<std::uint64_t, int> merge_result_;
};

/// Greedy BPE: each step merges the most frequent adjacent pair inside
/// pre-tokenization chunks; ties go to the lexicographically smallest pair.
/// Training is fully deterministic; `seed` is accepted for interface symmetry
/// with the other trainers and does not influence the result.
inline BpeModel train_bpe(std::span<const std::string> corpus, std::size_t vocab_size, BpeMode mode,
                          std::uint64_t seed = 0) {
  (void)seed;
  require(!corpus.empty(), "tokenizer", "cannot train BPE on an empty corpus");

  std::map<std::string, std::size_t> chunk_counts;
  for (const auto& text : corpus)
    for (const auto chunk : detail::chunks(text)) ++chunk_counts[std::string(chunk)];

  BpeModel m;
  m.mode_ = mode;
  for (const auto name : kSpecialNames) m.symbols_.emplace_back(name);
  std::set<std::string> alphabet;
  if (mode == BpeMode::byte_level) {
    for (int b = 0; b < 256; ++b) alphabet.insert(std::string(1, static_cast<char>(b)));
  } else {
    for (const auto& [chunk, count] : chunk_counts)
      for (auto& s : detail::base_symbols(chunk, mode)) alphabet.insert(std::move(s));
  }
  require(!alphabet.empty(), "tokenizer", "corpus has no symbols");
  m.alphabet_size_ = alphabet.size();
  require(vocab_size >= alphabet.size() + SpecialIds::count, "tokenizer",
          "vocab_size " + std::to_string(vocab_size) + " is smaller than alphabet + specials (" +
              std::to_string(alphabet.size() + SpecialIds::count) + ")");
  for (const auto& s : alphabet) m.symbols_.push_back(s);
  m.rebuild_index();

  struct Word {
    std::vector<int> ids;
    std::size_t count;
  };
  std::vector<Word> words;
  for (const auto& [chunk, count] : chunk_counts) {
    Word w{{}, count};
    for (const auto& s : detail::base_symbols(chunk, mode)) w.ids.push_back(m.find(s));
    words.push_back(std::move(w));
  }

  std::set<std::uint64_t> learned;
  while (m.symbols_.size() < vocab_size) {
    std::unordered_map<std::uint64_t, std::size_t> pair_counts;
    for (const auto& w : words)
      for (std::size_t i = 0; i + 1 < w.ids.size(); ++i) pair_counts[detail::pair_key(w.ids[i], w.ids[i + 1])] += w.count;
    if (pair_counts.empty()) break;
    std::uint64_t best = 0;
    std::size_t best_count = 0;
    for (const auto& [key, count] : pair_counts) {
      if (count < best_count) continue;
      if (count > best_count) {
        best = key;
        best_count = count;
        continue;
      }
      const auto sym = [&](std::uint64_t k, bool first) -> const std::string& {
        return m.symbols_[first ? (k >> 32) : (k & 0xFFFFFFFFu)];
      };
      const auto lhs = std::tie(sym(key, true), sym(key, false));
      const auto rhs = std::tie(sym(best, true), sym(best, false));
      if (lhs < rhs) best = key;
    }
    const int a = static_cast<int>(best >> 32), b = static_cast<int>(best & 0xFFFFFFFFu);
    const std::string merged = m.symbols_[static_cast<std::size_t>(a)] + m.symbols_[static_cast<std::size_t>(b)];
    int merged_id = m.find(merged);
    if (merged_id < 0) {
      merged_id = static_cast<int>(m.symbols_.size());
      m.symbols_.push_back(merged);
      m.ids_.emplace(merged, merged_id);
    }
    // A pair can resurface when two merge paths spell the same symbol; its
    // original rank already covers it.
    if (learned.insert(best).second)
      m.merges_.emplace_back(m.symbols_[static_cast<std::size_t>(a)], m.symbols_[static_cast<std::size_t>(b)]);
    for (auto& w : words) {
      if (w.ids.size() < 2) continue;
      std::vector<int> next;
      next.reserve(w.ids.size());
      for (std::size_t i = 0; i < w.ids.size(); ++i) {
        if (i + 1 < w.ids.size() && w.ids[i] == a && w.ids[i + 1] == b) {
          next.push_back(merged_id);
          ++i;
        } else {
          next.push_back(w.ids[i]);
        }
      }
      w.ids.swap(next);
    }
  }
  m.rebuild_index();
  return m;
}

}  // namespace stackens::tokenizer
