#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "anubis/error.hpp"

namespace anubis {

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

/// Byte trie over the vocabulary words.
class PrefixIndex {
 public:
  struct Match {
    TokenId id;
    std::size_t length;
  };

  PrefixIndex() { nodes_.emplace_back(); }

  void insert(std::string_view word, TokenId id) {
    std::size_t n = 0;
    for (unsigned char c : word) {
      auto it = nodes_[n].next.find(c);
      if (it == nodes_[n].next.end()) {
        nodes_.emplace_back();
        it = nodes_[n].next.emplace(c, nodes_.size() - 1).first;
      }
      n = it->second;
    }
    auto& ids = nodes_[n].ids;
    ids.insert(std::upper_bound(ids.begin(), ids.end(), id), id);
  }

  /// Every token whose word is a prefix of s.substr(pos), shortest first,
  /// ids ascending within one length.
  std::vector<Match> lookup(std::string_view s, std::size_t pos) const {
    std::vector<Match> out;
    std::size_t n = 0;
    for (std::size_t i = pos; i < s.size(); ++i) {
      auto it = nodes_[n].next.find(static_cast<unsigned char>(s[i]));
      if (it == nodes_[n].next.end()) break;
      n = it->second;
      for (TokenId id : nodes_[n].ids) out.push_back({id, i - pos + 1});
    }
    return out;
  }

  /// Longest match at pos, smallest id on ties; length 0 if none.
  Match longest(std::string_view s, std::size_t pos) const {
    Match best{0, 0};
    std::size_t n = 0;
    for (std::size_t i = pos; i < s.size(); ++i) {
      auto it = nodes_[n].next.find(static_cast<unsigned char>(s[i]));
      if (it == nodes_[n].next.end()) break;
      n = it->second;
      if (!nodes_[n].ids.empty()) best = {nodes_[n].ids.front(), i - pos + 1};
    }
    return best;
  }

 private:
  struct Node {
    std::map<unsigned char, std::size_t> next;
    std::vector<TokenId> ids;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Vocabulary file escapes
// ---------------------------------------------------------------------------

inline std::string escape_word(std::string_view w) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : w) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20 || c == 0x7f) {
          out += "\\x";
          out += hex[c >> 4];
          out += hex[c & 15];
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  return out;
}

inline std::string unescape_word(std::string_view w) {
  auto hexval = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] != '\\') {
      out += w[i];
      continue;
    }
    if (++i >= w.size()) throw Error("tokenizer-format", "dangling backslash");
    switch (w[i]) {
      case '\\': out += '\\'; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      case 'x': {
        if (i + 2 >= w.size()) throw Error("tokenizer-format", "short \\x escape");
        const int hi = hexval(w[i + 1]);
        const int lo = hexval(w[i + 2]);
        if (hi < 0 || lo < 0) throw Error("tokenizer-format", "bad \\x escape");
        out += static_cast<char>(hi * 16 + lo);
        i += 2;
        break;
      }
      default:
        throw Error("tokenizer-format", std::string("unknown escape \\") + w[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// TokenizerSpec
// ---------------------------------------------------------------------------

class TokenizerSpec {
 public:
  TokenizerSpec() = default;

  /// `words[id]` for id in 1..N, with words[eos_id] empty.
  TokenizerSpec(std::string name, std::vector<std::string> words, TokenId eos_id)
      : name_(std::move(name)), words_(std::move(words)), eos_(eos_id) {
    if (words_.empty()) words_.emplace_back();
    words_[0].clear();
    const auto n = static_cast<TokenId>(words_.size()) - 1;
    if (eos_ < 1 || eos_ > n) throw Error("tokenizer-format", "eos id outside 1..N");
    for (TokenId id = 1; id <= n; ++id) {
      if (id == eos_) {
        if (!words_[id].empty()) throw Error("tokenizer-format", "eos must decode to nothing");
        continue;
      }
      if (words_[id].empty()) throw Error("tokenizer-format", "token " + std::to_string(id) + " has an empty word");
      index_.insert(words_[id], id);
    }
  }

  static TokenizerSpec parse(std::istream& in) {
    std::string name = "tokenizer";
    std::map<TokenId, std::string> words;
    TokenId eos = 0;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& what) {
      throw Error("tokenizer-format", "line " + std::to_string(lineno) + ": " + what);
    };
    auto parse_id = [&](const std::string& s) {
      if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        fail("bad token id '" + s + "'");
      }
      const int v = std::stoi(s);
      if (v < 1) fail("token ids start at 1");
      return v;
    };
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find('\r') != std::string::npos) fail("carriage return in line");
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) fail("expected <key><TAB><value>");
      const std::string key = line.substr(0, tab);
      const std::string value = line.substr(tab + 1);
      if (key == "!eos") {
        if (eos != 0) fail("eos declared twice");
        eos = parse_id(value);
      } else if (key == "!name") {
        name = value;
      } else if (!key.empty() && key[0] == '!') {
        fail("unknown directive " + key);
      } else {
        const TokenId id = parse_id(key);
        std::string word;
        try {
          word = unescape_word(value);
        } catch (const Error& e) {
          fail(e.what());
        }
        if (word.empty()) fail("empty word");
        if (!words.emplace(id, std::move(word)).second) fail("duplicate id " + key);
      }
    }
    if (eos == 0) throw Error("tokenizer-format", "missing !eos directive");
    if (words.count(eos)) throw Error("tokenizer-format", "eos id also has a word");
    const auto n = static_cast<TokenId>(words.size()) + 1;
    std::vector<std::string> dense(static_cast<std::size_t>(n) + 1);
    for (auto& [id, w] : words) {
      if (id > n) throw Error("tokenizer-format", "ids are not dense in 1..N");
      dense[static_cast<std::size_t>(id)] = std::move(w);
    }
    if (eos > n) throw Error("tokenizer-format", "ids are not dense in 1..N");
    return TokenizerSpec(std::move(name), std::move(dense), eos);
  }

  static TokenizerSpec parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static TokenizerSpec load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot open tokenizer file " + path);
    return parse(in);
  }

  std::string serialize() const {
    std::string out = "!name\t" + name_ + "\n!eos\t" + std::to_string(eos_) + "\n";
    for (TokenId id = 1; id <= size(); ++id) {
      if (id == eos_) continue;
      out += std::to_string(id) + "\t" + escape_word(words_[static_cast<std::size_t>(id)]) + "\n";
    }
    return out;
  }

  const std::string& name() const noexcept { return name_; }
  TokenId eos() const noexcept { return eos_; }
  /// Number of token ids, EOS included.
  TokenId size() const noexcept { return static_cast<TokenId>(words_.size()) - 1; }
  bool contains(TokenId id) const noexcept { return id >= 1 && id <= size(); }
  const PrefixIndex& index() const noexcept { return index_; }

  const std::string& word(TokenId id) const {
    if (!contains(id)) throw Error("unknown-token", "token id " + std::to_string(id));
    return words_[static_cast<std::size_t>(id)];
  }

  std::vector<TokenId> non_eos_ids() const {
    std::vector<TokenId> out;
    for (TokenId id = 1; id <= size(); ++id) {
      if (id != eos_) out.push_back(id);
    }
    return out;
  }

  /// Greedy longest match, left to right; smallest id among equal words.
  TokenSeq encode(std::string_view text) const {
    TokenSeq out;
    std::size_t pos = 0;
    while (pos < text.size()) {
      const auto m = index_.longest(text, pos);
      if (m.length == 0) {
        throw Error("untokenizable", "no token matches at byte " + std::to_string(pos));
      }
      out.push_back(m.id);
      pos += m.length;
    }
    return out;
  }

  std::string decode(const TokenSeq& seq) const {
    std::string out;
    for (TokenId id : seq) out += word(id);
    return out;
  }

 private:
  std::string name_;
  std::vector<std::string> words_;
  TokenId eos_ = 0;
  PrefixIndex index_;
};

/// No non-EOS token after the first EOS.
inline bool well_formed(const TokenSeq& seq, TokenId eos) {
  auto first = std::find(seq.begin(), seq.end(), eos);
  return std::all_of(first, seq.end(), [eos](TokenId t) { return t == eos; });
}

// ---------------------------------------------------------------------------
// Collisions
// ---------------------------------------------------------------------------

enum class CollisionSearch { prefix_index, brute_force };

/// All non-EOS token sequences of length 1..d that decode to `text`, sorted.
inline std::vector<TokenSeq> collisions_of_text(const TokenizerSpec& spec, std::string_view text,
                                                std::size_t d,
                                                CollisionSearch mode = CollisionSearch::prefix_index) {
  if (d < 1) throw Error("invalid-argument", "collision depth must be >= 1");
  std::vector<TokenSeq> out;
  if (mode == CollisionSearch::brute_force) {
    const auto ids = spec.non_eos_ids();
    if (ids.empty()) return out;
    for (std::size_t len = 1; len <= d; ++len) {
      std::vector<std::size_t> digit(len, 0);
      while (true) {
        TokenSeq seq(len);
        for (std::size_t i = 0; i < len; ++i) seq[i] = ids[digit[i]];
        if (spec.decode(seq) == text) out.push_back(seq);
        std::size_t k = len;
        while (k > 0 && ++digit[k - 1] == ids.size()) digit[--k] = 0;
        if (k == 0) break;
      }
    }
  } else {
    TokenSeq cur;
    auto dfs = [&](auto&& self, std::size_t pos) -> void {
      if (pos == text.size()) {
        if (!cur.empty()) out.push_back(cur);
        return;
      }
      if (cur.size() == d) return;
      for (const auto& m : spec.index().lookup(text, pos)) {
        cur.push_back(m.id);
        self(self, pos + m.length);
        cur.pop_back();
      }
    };
    dfs(dfs, 0);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<TokenSeq> get_collision(const TokenizerSpec& spec, const TokenSeq& sigma,
                                           std::size_t d,
                                           CollisionSearch mode = CollisionSearch::prefix_index) {
  return collisions_of_text(spec, spec.decode(sigma), d, mode);
}

}  // namespace anubis
