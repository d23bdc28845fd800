#pragma once

#include <cmath>

#include "anubis/core_stats.hpp"
#include "anubis/tokenizer.hpp"

namespace anubis {

/// Next-token distribution of an autoregressive model.
class TokenDist {
 public:
  virtual ~TokenDist() = default;

  /// P(tok | history). Histories containing EOS put all mass on EOS.
  virtual double next_prob(const TokenSeq& history, TokenId tok) const = 0;
  virtual TokenId eos() const = 0;

  double next_log_prob(const TokenSeq& history, TokenId tok) const {
    const double p = next_prob(history, tok);
    return p > 0.0 ? std::log(p) : kNegInf;
  }
};

/// Chain-rule log probability of seq, optionally followed by EOS.
inline double seq_log_prob(const TokenDist& dist, const TokenSeq& seq, bool with_eos,
                           const TokenSeq& context = {}) {
  TokenSeq hist = context;
  double lp = 0.0;
  for (TokenId t : seq) {
    lp += dist.next_log_prob(hist, t);
    if (lp == kNegInf) return lp;
    hist.push_back(t);
  }
  if (with_eos) lp += dist.next_log_prob(hist, dist.eos());
  return lp;
}

}  // namespace anubis
