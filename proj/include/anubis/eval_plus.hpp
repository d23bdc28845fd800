#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "anubis/core_stats.hpp"
#include "anubis/error.hpp"
#include "anubis/token_dist.hpp"
#include "anubis/tokenizer.hpp"

namespace anubis {

/// as_written:      the recursive split; prefix and suffix estimates are both
///                  unconditioned, the EOS factor sits on the final suffix.
/// conditioned:     same split, each segment conditioned on the original
///                  tokens before it.
/// candidate_union: the distinct token sequences the split can produce, each
///                  scored once with the chain rule and a final EOS factor.
enum class EvalPlusMode { as_written, conditioned, candidate_union };

inline const char* to_string(EvalPlusMode m) {
  switch (m) {
    case EvalPlusMode::as_written: return "as_written";
    case EvalPlusMode::conditioned: return "conditioned";
    default: return "candidate_union";
  }
}

inline EvalPlusMode parse_eval_plus_mode(const std::string& s) {
  if (s == "as_written") return EvalPlusMode::as_written;
  if (s == "conditioned") return EvalPlusMode::conditioned;
  if (s == "candidate_union") return EvalPlusMode::candidate_union;
  throw Error("invalid-argument", "unknown eval_plus mode '" + s + "'");
}

struct EvalPlusOptions {
  std::size_t depth = 2;
  EvalPlusMode mode = EvalPlusMode::candidate_union;
  CollisionSearch search = CollisionSearch::prefix_index;
  std::size_t max_candidates = 200'000;
};

struct EvalPlusResult {
  double log_prob = kNegInf;
  double prob = 0.0;  // exp(log_prob) clamped to [0, 1]; may underflow
  std::size_t candidates = 0;
};

namespace detail {

class EvalPlusRun {
 public:
  EvalPlusRun(const TokenDist& dist, const TokenizerSpec& spec, const TokenSeq& sigma,
              const EvalPlusOptions& opt)
      : dist_(dist), spec_(spec), sigma_(sigma), opt_(opt) {}

  double split(std::size_t s, std::size_t len, std::size_t depth, bool terminal) {
    const auto key = std::make_tuple(s, len, depth, terminal);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    double acc = kNegInf;
    if (len <= depth) {
      TokenSeq ctx;
      if (opt_.mode == EvalPlusMode::conditioned) ctx.assign(sigma_.begin(), sigma_.begin() + s);
      for (const auto& c : collisions(s, len, depth)) {
        acc = log_add(acc, seq_log_prob(dist_, c, terminal, ctx));
      }
    } else {
      for (std::size_t i = 1; i <= depth; ++i) {
        const double head = split(s, i, i, false);
        if (head == kNegInf) continue;
        acc = log_add(acc, head + split(s + i, len - i, depth, terminal));
      }
    }
    memo_.emplace(key, acc);
    return acc;
  }

  const std::set<TokenSeq>& candidates(std::size_t s) {
    if (auto it = cand_.find(s); it != cand_.end()) return it->second;
    const std::size_t len = sigma_.size() - s;
    std::set<TokenSeq> out;
    if (len <= opt_.depth) {
      const auto& c = collisions(s, len, opt_.depth);
      out.insert(c.begin(), c.end());
    } else {
      for (std::size_t i = 1; i <= opt_.depth; ++i) {
        const auto heads = collisions(s, i, i);
        if (heads.empty()) continue;
        const auto& tails = candidates(s + i);
        for (const auto& h : heads) {
          for (const auto& t : tails) {
            TokenSeq seq = h;
            seq.insert(seq.end(), t.begin(), t.end());
            out.insert(std::move(seq));
            if (out.size() > opt_.max_candidates) {
              throw Error("eval-plus-intractable", "candidate set exceeds max_candidates");
            }
          }
        }
      }
    }
    return cand_.emplace(s, std::move(out)).first->second;
  }

 private:
  const std::vector<TokenSeq>& collisions(std::size_t s, std::size_t len, std::size_t depth) {
    const auto key = std::make_tuple(s, len, depth);
    if (auto it = coll_.find(key); it != coll_.end()) return it->second;
    const TokenSeq piece(sigma_.begin() + s, sigma_.begin() + s + len);
    return coll_.emplace(key, get_collision(spec_, piece, depth, opt_.search)).first->second;
  }

  const TokenDist& dist_;
  const TokenizerSpec& spec_;
  const TokenSeq& sigma_;
  const EvalPlusOptions& opt_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t, bool>, double> memo_;
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<TokenSeq>> coll_;
  std::map<std::size_t, std::set<TokenSeq>> cand_;
};

}  // namespace detail

/// Collision-aware estimate of L(decode(sigma)). A trailing EOS in sigma is
/// ignored; the empty sequence scores P(EOS | empty history).
inline EvalPlusResult eval_plus(const TokenDist& dist, const TokenizerSpec& spec, TokenSeq sigma,
                                const EvalPlusOptions& opt = {}) {
  if (opt.depth < 1) throw Error("invalid-argument", "eval_plus depth must be >= 1");
  while (!sigma.empty() && sigma.back() == spec.eos()) sigma.pop_back();
  if (!well_formed(sigma, spec.eos())) throw Error("invalid-argument", "EOS inside the sequence");
  for (TokenId t : sigma) {
    if (!spec.contains(t)) throw Error("unknown-token", "token id " + std::to_string(t));
  }

  EvalPlusResult r;
  if (sigma.empty()) {
    r.log_prob = dist.next_log_prob({}, dist.eos());
    r.candidates = 1;
  } else {
    detail::EvalPlusRun run(dist, spec, sigma, opt);
    if (opt.mode == EvalPlusMode::candidate_union) {
      const auto& cands = run.candidates(0);
      r.candidates = cands.size();
      for (const auto& c : cands) r.log_prob = log_add(r.log_prob, seq_log_prob(dist, c, true));
    } else {
      r.log_prob = run.split(0, sigma.size(), opt.depth, true);
    }
  }
  r.prob = std::min(std::exp(r.log_prob), 1.0);
  return r;
}

inline EvalPlusResult eval_plus_text(const TokenDist& dist, const TokenizerSpec& spec,
                                     const std::string& text, const EvalPlusOptions& opt = {}) {
  return eval_plus(dist, spec, spec.encode(text), opt);
}

}  // namespace anubis
