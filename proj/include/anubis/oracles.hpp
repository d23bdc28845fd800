#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "anubis/core_stats.hpp"
#include "anubis/error.hpp"
#include "anubis/multiset.hpp"
#include "anubis/random.hpp"

namespace anubis {

inline std::uint64_t key_hash(std::string_view s) noexcept { return stable_hash(s); }
inline std::uint64_t key_hash(const std::string& s) noexcept { return stable_hash(std::string_view(s)); }

template <class T>
  requires std::is_integral_v<T>
inline std::uint64_t key_hash(T v) noexcept {
  return stable_hash(v);
}

/// EVAL access. `eval` is the linear mass; `log_eval` the natural log of the
/// same quantity, used when the linear value underflows.
template <class K>
struct EvalOracle {
  std::function<double(const K&)> eval;
  std::function<double(const K&)> log_eval;
  double eta = 0.0;

  double operator()(const K& x) const { return eval(x); }

  double log_prob(const K& x) const {
    if (log_eval) return log_eval(x);
    const double p = eval(x);
    return p > 0.0 ? std::log(p) : kNegInf;
  }
};

/// SAMP access. `draw_multiset` defaults to n independent calls of `draw`.
template <class K>
struct SampOracle {
  std::function<K(Rng&)> draw;
  std::function<Multiset<K>(std::size_t, Rng&)> multi;

  K operator()(Rng& rng) const { return draw(rng); }

  Multiset<K> draw_multiset(std::size_t n, Rng& rng) const {
    if (multi) return multi(n, rng);
    Multiset<K> out;
    for (std::size_t i = 0; i < n; ++i) out.add(draw(rng));
    return out;
  }
};

template <class K>
struct OraclePair {
  SampOracle<K> samp;
  EvalOracle<K> eval;
};

/// Exact oracles over a Pmf. Sampling is inverse-CDF over the key order of
/// the pmf; bulk draws split n binomially along the same order.
template <class K>
OraclePair<K> exact_oracle(const Pmf<K>& p) {
  struct Table {
    std::vector<K> keys;
    std::vector<double> weights;
    std::vector<double> cumulative;
    Pmf<K> pmf;
  };
  auto table = std::make_shared<Table>();
  table->pmf = p;
  double acc = 0.0;
  for (const auto& [x, w] : p.weights()) {
    if (w <= 0.0) continue;
    table->keys.push_back(x);
    table->weights.push_back(w);
    acc += w;
    table->cumulative.push_back(acc);
  }

  OraclePair<K> out;
  out.eval.eval = [table](const K& x) { return table->pmf(x); };
  out.eval.eta = 0.0;
  out.samp.draw = [table](Rng& rng) -> K {
    const auto& cum = table->cumulative;
    const double u = uniform01(rng) * cum.back();
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    if (it == cum.end()) --it;
    return table->keys[static_cast<std::size_t>(it - cum.begin())];
  };
  out.samp.multi = [table](std::size_t n, Rng& rng) {
    Multiset<K> ms;
    std::uint64_t left = n;
    double mass_left = table->cumulative.back();
    for (std::size_t i = 0; i < table->keys.size() && left > 0; ++i) {
      const double w = table->weights[i];
      std::uint64_t k = left;
      if (i + 1 < table->keys.size()) {
        const double q = std::clamp(w / mass_left, 0.0, 1.0);
        std::binomial_distribution<std::uint64_t> bin(left, q);
        k = bin(rng);
      }
      ms.add(table->keys[i], static_cast<std::size_t>(k));
      left -= k;
      mass_left -= w;
      if (mass_left <= 0.0) mass_left = w;
    }
    return ms;
  };
  return out;
}

/// Deterministic eta-approximate EVAL: inner(x) * (1 + eta * u(x)) with
/// u(x) in [-1, 1) a hash of (seed, x).
template <class K>
EvalOracle<K> approx_wrap(EvalOracle<K> inner, double eta, std::uint64_t seed) {
  if (!(eta >= 0.0 && eta < 1.0)) throw Error("invalid-argument", "eta must lie in [0, 1)");
  if (eta == 0.0) return inner;
  auto shared = std::make_shared<EvalOracle<K>>(std::move(inner));
  auto noise = [eta, seed](const K& x) {
    return eta * hash_to_signed_unit(derive_seed(seed, key_hash(x)));
  };
  EvalOracle<K> out;
  out.eta = eta;
  out.eval = [shared, noise](const K& x) { return shared->eval(x) * (1.0 + noise(x)); };
  out.log_eval = [shared, noise](const K& x) {
    return shared->log_prob(x) + std::log1p(noise(x));
  };
  return out;
}

}  // namespace anubis
