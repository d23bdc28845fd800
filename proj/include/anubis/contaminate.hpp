#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <mutex>
#include <numeric>
#include <random>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "anubis/eval_plus.hpp"
#include "anubis/oracles.hpp"
#include "anubis/random.hpp"
#include "anubis/scored_io.hpp"
#include "anubis/toy_model.hpp"

namespace anubis {

/// Log-probability of whole texts under one toy model, cached and safe to
/// share between threads. depth 0 uses exact enumeration, depth >= 1 EVAL+.
class TextScorer {
 public:
  TextScorer(const ToyTokenDist& model, const TokenizerSpec& spec, std::size_t depth = 0,
             EvalPlusMode mode = EvalPlusMode::candidate_union)
      : model_(model), spec_(spec), depth_(depth), mode_(mode) {
    if (depth_ == 0) check_oracle_guard(spec_, model_.max_len());
  }

  double log_prob(const std::string& text) const {
    {
      std::shared_lock lock(mu_);
      if (auto it = cache_.find(text); it != cache_.end()) return it->second;
    }
    const double lp = compute(text);
    std::unique_lock lock(mu_);
    cache_.emplace(text, lp);
    return lp;
  }

  std::string method() const {
    return depth_ == 0 ? std::string("exact")
                       : "eval_plus(d=" + std::to_string(depth_) + "," + to_string(mode_) + ")";
  }

  const ToyTokenDist& model() const noexcept { return model_; }

  EvalOracle<std::string> oracle() const {
    EvalOracle<std::string> o;
    o.eval = [this](const std::string& x) { return std::exp(log_prob(x)); };
    o.log_eval = [this](const std::string& x) { return log_prob(x); };
    return o;
  }

 private:
  double compute(const std::string& text) const {
    if (depth_ == 0) {
      const double p = exact_text_prob(model_, spec_, text, model_.max_len());
      return p > 0.0 ? std::log(p) : kNegInf;
    }
    EvalPlusOptions opt;
    opt.depth = depth_;
    opt.mode = mode_;
    return eval_plus_text(model_, spec_, text, opt).log_prob;
  }

  const ToyTokenDist& model_;
  const TokenizerSpec& spec_;
  std::size_t depth_;
  EvalPlusMode mode_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<std::string, double> cache_;
};

/// floor(gamma * n / 100), with a small guard against representation error.
inline std::size_t replaced_count(double gamma_pct, std::size_t n) {
  if (!(gamma_pct >= 0.0 && gamma_pct <= 100.0)) {
    throw Error("invalid-argument", "gamma must lie in [0, 100]");
  }
  return static_cast<std::size_t>(std::floor(gamma_pct * static_cast<double>(n) / 100.0 + 1e-9));
}

/// n target draws, of which a uniformly chosen floor(gamma n / 100) subset is
/// replaced by adversary draws. Each sample carries both models' scores.
inline std::vector<ScoredSample> make_contaminated_dataset(const TextScorer& target,
                                                           const TextScorer& adversary,
                                                           const TokenizerSpec& spec,
                                                           double gamma_pct, std::size_t n,
                                                           Rng& rng) {
  if (target.model().name() == adversary.model().name()) {
    throw Error("model-mismatch", "target and adversary need distinct names");
  }
  const std::size_t k = replaced_count(gamma_pct, n);
  std::vector<SampledText> draws;
  draws.reserve(n);
  for (std::size_t i = 0; i < n; ++i) draws.push_back(sample_text(target.model(), spec, rng));

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<bool> replaced(n, false);
  for (std::size_t i = 0; i < k; ++i) replaced[idx[i]] = true;
  for (std::size_t i = 0; i < n; ++i) {
    if (replaced[i]) draws[i] = sample_text(adversary.model(), spec, rng);
  }

  std::vector<ScoredSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ScoredSample s;
    s.id = "s" + std::to_string(i);
    s.text = draws[i].text;
    s.tokens = draws[i].tokens;
    if (!s.tokens.empty() && s.tokens.back() == spec.eos()) s.tokens.pop_back();
    s.logprob[target.model().name()] = target.log_prob(s.text);
    s.logprob[adversary.model().name()] = adversary.log_prob(s.text);
    s.provenance = replaced[i] ? "adversary" : "target";
    if (draws[i].truncated) s.extra["truncated"] = true;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace anubis
