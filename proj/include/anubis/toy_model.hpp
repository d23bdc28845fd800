#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "anubis/core_stats.hpp"
#include "anubis/error.hpp"
#include "anubis/random.hpp"
#include "anubis/token_dist.hpp"
#include "anubis/tokenizer.hpp"

namespace anubis {

inline constexpr double kRowSumTolerance = 1e-12;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  const auto* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

inline bool parse_int(std::string_view s, long long& out) {
  const auto* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Order-k Markov model over token ids with backoff to the longest context
/// suffix that has a row. Rows are indexed by token id (index 0 unused).
class ToyTokenDist : public TokenDist {
 public:
  using Row = std::vector<double>;

  ToyTokenDist() = default;

  ToyTokenDist(std::string name, std::size_t order, TokenId vocab_size, TokenId eos,
               std::size_t max_len, std::map<TokenSeq, Row> rows)
      : name_(std::move(name)), order_(order), vocab_(vocab_size), eos_(eos), max_len_(max_len),
        rows_(std::move(rows)) {
    auto fail = [](const std::string& what) { throw Error("model-format", what); };
    if (order_ < 1) fail("order must be >= 1");
    if (max_len_ < 1) fail("max_len must be >= 1");
    if (eos_ < 1 || eos_ > vocab_) fail("eos outside the vocabulary");
    if (!rows_.count(TokenSeq{})) fail("missing row for the empty context");
    for (const auto& [ctx, row] : rows_) {
      if (ctx.size() > order_) fail("context longer than the model order");
      for (TokenId t : ctx) {
        if (t < 1 || t > vocab_ || t == eos_) fail("invalid token in context");
      }
      if (row.size() != static_cast<std::size_t>(vocab_) + 1) fail("row has the wrong width");
      double sum = 0.0;
      for (std::size_t i = 1; i < row.size(); ++i) {
        if (!(row[i] >= 0.0) || !std::isfinite(row[i])) fail("row entries must be finite and >= 0");
        sum += row[i];
      }
      if (row[0] != 0.0) fail("row slot 0 must be empty");
      if (std::abs(sum - 1.0) > kRowSumTolerance) fail("row does not sum to 1");
    }
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t order() const noexcept { return order_; }
  TokenId vocab_size() const noexcept { return vocab_; }
  TokenId eos() const override { return eos_; }
  std::size_t max_len() const noexcept { return max_len_; }
  const std::map<TokenSeq, Row>& rows() const noexcept { return rows_; }
  const std::string& tokenizer_ref() const noexcept { return tokenizer_ref_; }
  void set_tokenizer_ref(std::string r) { tokenizer_ref_ = std::move(r); }

  /// Row used after `history` (history must not contain EOS).
  const Row& row_for(const TokenSeq& history) const {
    const std::size_t k = std::min(order_, history.size());
    for (std::size_t len = k; len > 0; --len) {
      TokenSeq ctx(history.end() - static_cast<std::ptrdiff_t>(len), history.end());
      auto it = rows_.find(ctx);
      if (it != rows_.end()) return it->second;
    }
    return rows_.at(TokenSeq{});
  }

  double next_prob(const TokenSeq& history, TokenId tok) const override {
    if (tok < 1 || tok > vocab_) return 0.0;
    if (std::find(history.begin(), history.end(), eos_) != history.end()) {
      return tok == eos_ ? 1.0 : 0.0;
    }
    return row_for(history)[static_cast<std::size_t>(tok)];
  }

  static ToyTokenDist parse(std::istream& in, const TokenizerSpec& spec) {
    std::string name = "model";
    std::string tok_ref;
    long long order = -1;
    long long max_len = -1;
    std::map<TokenSeq, Row> rows;
    const auto width = static_cast<std::size_t>(spec.size()) + 1;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& what) {
      throw Error("model-format", "line " + std::to_string(lineno) + ": " + what);
    };
    auto parse_token = [&](std::string_view s) -> TokenId {
      if (s == "eos") return spec.eos();
      long long v = 0;
      if (!detail::parse_int(s, v) || v < 1 || v > spec.size()) {
        fail("bad token '" + std::string(s) + "'");
      }
      return static_cast<TokenId>(v);
    };
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view s = detail::trim(line);
      if (!s.empty() && s.back() == '\r') s = detail::trim(s.substr(0, s.size() - 1));
      if (s.empty() || s.front() == '#') continue;
      if (s.substr(0, 4) == "row " || s.substr(0, 4) == "row\t") {
        const auto bar = s.find('|');
        if (bar == std::string_view::npos) fail("row needs '|'");
        const auto ctx_text = detail::trim(s.substr(4, bar - 4));
        TokenSeq ctx;
        if (ctx_text != ".") {
          std::string_view rest = ctx_text;
          while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto part = detail::trim(rest.substr(0, comma));
            const TokenId t = parse_token(part);
            if (t == spec.eos()) fail("eos cannot appear in a context");
            ctx.push_back(t);
            if (comma == std::string_view::npos) break;
            rest = rest.substr(comma + 1);
          }
        }
        Row row(width, 0.0);
        for (auto entry : detail::split_ws(s.substr(bar + 1))) {
          const auto colon = entry.rfind(':');
          if (colon == std::string_view::npos) fail("entry needs tok:prob");
          const TokenId t = parse_token(entry.substr(0, colon));
          double p = 0.0;
          if (!detail::parse_double(entry.substr(colon + 1), p)) fail("bad probability");
          row[static_cast<std::size_t>(t)] += p;
        }
        if (!rows.emplace(std::move(ctx), std::move(row)).second) fail("duplicate context");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string_view::npos) fail("expected key = value");
      const auto key = detail::trim(s.substr(0, eq));
      const auto value = detail::trim(s.substr(eq + 1));
      if (key == "name") {
        name = std::string(value);
      } else if (key == "tokenizer") {
        tok_ref = std::string(value);
      } else if (key == "order") {
        if (!detail::parse_int(value, order) || order < 1) fail("bad order");
      } else if (key == "max_len") {
        if (!detail::parse_int(value, max_len) || max_len < 1) fail("bad max_len");
      } else {
        fail("unknown key '" + std::string(key) + "'");
      }
    }
    if (order < 0) throw Error("model-format", "missing order");
    if (max_len < 0) throw Error("model-format", "missing max_len");
    ToyTokenDist m(std::move(name), static_cast<std::size_t>(order), spec.size(), spec.eos(),
                   static_cast<std::size_t>(max_len), std::move(rows));
    m.tokenizer_ref_ = std::move(tok_ref);
    return m;
  }

  static ToyTokenDist parse_string(const std::string& text, const TokenizerSpec& spec) {
    std::istringstream in(text);
    return parse(in, spec);
  }

  std::string serialize() const {
    std::string out = "name = " + name_ + "\norder = " + std::to_string(order_) + "\n";
    if (!tokenizer_ref_.empty()) out += "tokenizer = " + tokenizer_ref_ + "\n";
    out += "max_len = " + std::to_string(max_len_) + "\n";
    for (const auto& [ctx, row] : rows_) {
      out += "row ";
      if (ctx.empty()) out += ".";
      for (std::size_t i = 0; i < ctx.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(ctx[i]);
      }
      out += " |";
      for (TokenId t = 1; t <= vocab_; ++t) {
        const double p = row[static_cast<std::size_t>(t)];
        if (p == 0.0) continue;
        out += " ";
        out += t == eos_ ? std::string("eos") : std::to_string(t);
        out += ":" + detail::format_double(p);
      }
      out += "\n";
    }
    return out;
  }

 private:
  std::string name_;
  std::size_t order_ = 1;
  TokenId vocab_ = 0;
  TokenId eos_ = 0;
  std::size_t max_len_ = 1;
  std::map<TokenSeq, Row> rows_;
  std::string tokenizer_ref_;
};

struct ModelBundle {
  ToyTokenDist model;
  TokenizerSpec spec;
};

/// Loads a model file and the tokenizer it references (resolved relative to
/// the model file), or `tokenizer_override` when given.
inline ModelBundle load_model_bundle(const std::string& path,
                                     const std::string& tokenizer_override = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io", "cannot open model file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::string tok_path = tokenizer_override;
  if (tok_path.empty()) {
    std::istringstream scan(text);
    std::string line;
    while (std::getline(scan, line)) {
      auto s = detail::trim(line);
      if (s.substr(0, 9) != "tokenizer") continue;
      const auto eq = s.find('=');
      if (eq == std::string_view::npos || detail::trim(s.substr(0, eq)) != "tokenizer") continue;
      tok_path = std::string(detail::trim(s.substr(eq + 1)));
      break;
    }
    if (tok_path.empty()) throw Error("model-format", path + ": no tokenizer given");
    std::filesystem::path p(tok_path);
    if (p.is_relative()) tok_path = (std::filesystem::path(path).parent_path() / p).string();
  }
  ModelBundle b{ToyTokenDist{}, TokenizerSpec::load(tok_path)};
  b.model = ToyTokenDist::parse_string(text, b.spec);
  return b;
}

/// Row-wise mixture (1 - w) * a + w * b over the union of contexts.
inline ToyTokenDist interpolate(const ToyTokenDist& a, const ToyTokenDist& b, double w,
                                std::string name = "") {
  if (a.vocab_size() != b.vocab_size() || a.eos() != b.eos()) {
    throw Error("model-mismatch", "models use different vocabularies");
  }
  if (!(w >= 0.0 && w <= 1.0)) throw Error("invalid-argument", "mixture weight must lie in [0, 1]");
  std::map<TokenSeq, ToyTokenDist::Row> rows;
  auto add = [&](const TokenSeq& ctx) {
    if (rows.count(ctx)) return;
    const auto& ra = a.row_for(ctx);
    const auto& rb = b.row_for(ctx);
    ToyTokenDist::Row r(ra.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = (1.0 - w) * ra[i] + w * rb[i];
    rows.emplace(ctx, std::move(r));
  };
  for (const auto& [ctx, row] : a.rows()) add(ctx);
  for (const auto& [ctx, row] : b.rows()) add(ctx);
  ToyTokenDist out(name.empty() ? a.name() + "+" + b.name() : std::move(name),
                   std::max(a.order(), b.order()), a.vocab_size(), a.eos(),
                   std::max(a.max_len(), b.max_len()), std::move(rows));
  out.set_tokenizer_ref(a.tokenizer_ref());
  return out;
}

// ---------------------------------------------------------------------------
// Sampling and exact enumeration
// ---------------------------------------------------------------------------

struct SampledText {
  std::string text;
  TokenSeq tokens;  // ends with EOS unless truncated
  bool truncated = false;
};

/// At most max_len non-EOS tokens followed by EOS. When the draw after the
/// last allowed token is not EOS, the text is cut there and flagged.
inline SampledText sample_text(const ToyTokenDist& model, const TokenizerSpec& spec, Rng& rng) {
  SampledText out;
  TokenSeq& hist = out.tokens;
  while (true) {
    const auto& row = model.row_for(hist);
    const double u = uniform01(rng);
    double acc = 0.0;
    TokenId pick = 0;
    TokenId last_positive = 0;
    for (TokenId t = 1; t < static_cast<TokenId>(row.size()); ++t) {
      if (row[static_cast<std::size_t>(t)] <= 0.0) continue;
      last_positive = t;
      acc += row[static_cast<std::size_t>(t)];
      if (u < acc) {
        pick = t;
        break;
      }
    }
    if (pick == 0) pick = last_positive;  // rounding at the top of the row
    if (pick != model.eos() && hist.size() == model.max_len()) {
      out.truncated = true;
      return out;
    }
    hist.push_back(pick);
    if (pick == model.eos()) return out;
    out.text += spec.word(pick);
  }
}

inline constexpr std::size_t kOracleMaxLen = 12;
inline constexpr std::size_t kOracleMaxVocab = 30;

inline void check_oracle_guard(const TokenizerSpec& spec, std::size_t len_cap) {
  if (len_cap > kOracleMaxLen || spec.non_eos_ids().size() > kOracleMaxVocab) {
    throw Error("oracle-intractable", "exact enumeration needs len_cap <= 12 and <= 30 tokens");
  }
}

/// L(text): every token sequence of length <= len_cap decoding to `text`,
/// each scored by the chain rule times the final EOS factor. Matches words
/// by scanning the vocabulary linearly.
inline double exact_text_prob(const TokenDist& model, const TokenizerSpec& spec,
                              std::string_view text, std::size_t len_cap) {
  check_oracle_guard(spec, len_cap);
  const auto ids = spec.non_eos_ids();
  TokenSeq hist;
  double total = 0.0;
  auto dfs = [&](auto&& self, std::size_t pos, double p) -> void {
    if (pos == text.size()) total += p * model.next_prob(hist, model.eos());
    if (hist.size() == len_cap) return;
    for (TokenId t : ids) {
      const std::string& w = spec.word(t);
      if (text.substr(pos, w.size()) != w) continue;
      const double q = p * model.next_prob(hist, t);
      if (q == 0.0) continue;
      hist.push_back(t);
      self(self, pos + w.size(), q);
      hist.pop_back();
    }
  };
  dfs(dfs, 0, 1.0);
  return total;
}

struct TextPmf {
  Pmf<std::string> pmf;
  double enumerated = 0.0;  // mass before renormalization
  double dropped = 0.0;     // mass of sequences cut off by len_cap or min_mass
  std::size_t nodes = 0;
};

/// Full enumeration of the text distribution up to len_cap tokens. Prefixes
/// whose mass falls below min_mass are dropped (counted in `dropped`).
inline TextPmf text_pmf(const TokenDist& model, const TokenizerSpec& spec, std::size_t len_cap,
                        double min_mass = 0.0, std::size_t node_budget = 20'000'000) {
  if (min_mass <= 0.0) check_oracle_guard(spec, len_cap);
  const auto ids = spec.non_eos_ids();
  std::map<std::string, double> mass;
  TokenSeq hist;
  std::string text;
  TextPmf out;
  auto dfs = [&](auto&& self, double p) -> void {
    if (++out.nodes > node_budget) {
      throw Error("oracle-intractable", "text_pmf exceeded its node budget");
    }
    const double stop = p * model.next_prob(hist, model.eos());
    if (stop > 0.0) mass[text] += stop;
    if (hist.size() == len_cap) {
      out.dropped += p - stop;
      return;
    }
    for (TokenId t : ids) {
      const double q = p * model.next_prob(hist, t);
      if (q == 0.0) continue;
      if (q < min_mass) {
        out.dropped += q;
        continue;
      }
      hist.push_back(t);
      const auto before = text.size();
      text += spec.word(t);
      self(self, q);
      text.resize(before);
      hist.pop_back();
    }
  };
  dfs(dfs, 1.0);
  for (const auto& [s, m] : mass) out.enumerated += m;
  out.pmf = Pmf<std::string>::normalized(std::move(mass));
  return out;
}

/// Probability that sample_text truncates: max_len + 1 draws without EOS.
inline double truncated_mass(const ToyTokenDist& model) {
  std::map<TokenSeq, double> state{{TokenSeq{}, 1.0}};
  for (std::size_t step = 0; step <= model.max_len(); ++step) {
    std::map<TokenSeq, double> next;
    for (const auto& [ctx, m] : state) {
      const auto& row = model.row_for(ctx);
      for (TokenId t = 1; t <= model.vocab_size(); ++t) {
        if (t == model.eos() || row[static_cast<std::size_t>(t)] == 0.0) continue;
        TokenSeq c = ctx;
        c.push_back(t);
        if (c.size() > model.order()) c.erase(c.begin());
        next[c] += m * row[static_cast<std::size_t>(t)];
      }
    }
    state = std::move(next);
  }
  double s = 0.0;
  for (const auto& [ctx, m] : state) s += m;
  return s;
}

}  // namespace anubis
