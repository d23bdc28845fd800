#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "anubis/error.hpp"
#include "anubis/multiset.hpp"
#include "anubis/oracles.hpp"

namespace anubis {

inline constexpr std::size_t kDefaultEllMax = 1024;

/// Index j >= 1 with 2^-j < p <= 2^(1-j), without any cap. Exact for every
/// positive double, subnormals included.
inline std::uint64_t raw_bucket_index(double p) {
  if (std::isnan(p) || p <= 0.0) throw Error("nonpositive-probability", "bucket_index needs p > 0");
  if (p > 1.0) throw Error("invalid-probability", "bucket_index needs p <= 1");
  int e = 0;
  const double f = std::frexp(p, &e);  // p = f * 2^e, f in [1/2, 1)
  return static_cast<std::uint64_t>(f == 0.5 ? 2 - e : 1 - e);
}

/// Same index from a natural-log probability. Used only when the linear
/// value underflows to zero, where interval edges cannot be hit exactly.
inline std::uint64_t raw_bucket_index_log(double logp) {
  if (std::isnan(logp) || logp == kNegInf) {
    throw Error("nonpositive-probability", "bucket index needs log p > -inf");
  }
  if (logp > 0.0) throw Error("invalid-probability", "bucket index needs log p <= 0");
  const double p = std::exp(logp);
  if (p > 0.0) return raw_bucket_index(std::min(p, 1.0));
  return static_cast<std::uint64_t>(1.0 - std::ceil(logp / std::log(2.0)));
}

/// Bucket of probability p among 1..ell, or 0 (leftover) when p <= 2^-ell.
inline std::size_t bucket_index(double p, std::size_t ell) {
  const std::uint64_t j = raw_bucket_index(p);
  return j <= ell ? static_cast<std::size_t>(j) : 0;
}

/// floor(log2(domain_size / (c1 * eps2))) + 1.
inline std::size_t theoretical_ell(std::uint64_t domain_size, double c1, double eps2) {
  if (domain_size < 2) throw Error("invalid-argument", "domain_size must be >= 2");
  if (!(c1 > 0.0)) throw Error("invalid-argument", "c1 must be positive");
  if (!(eps2 > 0.0 && eps2 <= 1.0)) throw Error("invalid-argument", "eps2 must lie in (0, 1]");
  const double x = static_cast<double>(domain_size) / (c1 * eps2);
  if (!(x > 1.0)) throw Error("invalid-argument", "c1 * eps2 must be below domain_size");
  int e = 0;
  std::frexp(x, &e);  // x in [2^(e-1), 2^e), so floor(log2 x) = e - 1
  return static_cast<std::size_t>(e);
}

struct EllChoice {
  std::size_t ell = 1;
  bool capped = false;
};

/// Smallest ell >= 1 whose leftover fraction is at most tau, given the
/// multiplicity of each raw bucket index in the reference sample.
inline EllChoice empirical_ell_from_counts(const std::map<std::uint64_t, std::size_t>& raw_counts,
                                           double tau, std::size_t ell_max = kDefaultEllMax) {
  if (!(tau > 0.0 && tau <= 1.0)) throw Error("invalid-argument", "tau must lie in (0, 1]");
  if (ell_max < 1) throw Error("invalid-argument", "ell_max must be >= 1");
  std::size_t n = 0;
  for (const auto& [j, c] : raw_counts) n += c;
  if (n == 0) throw Error("empty-reference", "empirical_ell needs at least one probability");

  // samples whose raw index exceeds the current ell
  std::size_t above = n;
  auto it = raw_counts.begin();
  for (std::size_t ell = 1; ell <= ell_max; ++ell) {
    while (it != raw_counts.end() && it->first <= ell) {
      above -= it->second;
      ++it;
    }
    if (static_cast<double>(above) / static_cast<double>(n) <= tau) return {ell, false};
  }
  return {ell_max, true};
}

inline EllChoice empirical_ell(std::span<const double> ref_probs, double tau,
                               std::size_t ell_max = kDefaultEllMax) {
  std::map<std::uint64_t, std::size_t> counts;
  for (double p : ref_probs) ++counts[raw_bucket_index(p)];
  return empirical_ell_from_counts(counts, tau, ell_max);
}

// ---------------------------------------------------------------------------

template <class K>
struct BucketPartition {
  std::size_t ell = 0;
  std::vector<Multiset<K>> buckets;  // index 0 is the leftover bucket
  std::vector<double> ref_mass;      // own fraction per bucket, floored at 2^-ell
  std::size_t source_size = 0;
  std::size_t zero_mass = 0;         // samples whose eval was 0, parked in bucket 0

  std::vector<std::uint64_t> sizes() const {
    std::vector<std::uint64_t> out;
    out.reserve(buckets.size());
    for (const auto& b : buckets) out.push_back(b.total());
    return out;
  }

  std::size_t retained() const noexcept { return source_size - buckets[0].total(); }

  double leftover_fraction() const noexcept {
    return source_size == 0 ? 0.0
                            : static_cast<double>(buckets[0].total()) /
                                  static_cast<double>(source_size);
  }
};

/// Raw bucket index for one element as seen through an oracle, or nullopt
/// when the oracle reports zero mass.
template <class K>
std::optional<std::uint64_t> oracle_bucket(const EvalOracle<K>& eval, const K& x) {
  const double p = eval(x);
  if (p > 0.0) return raw_bucket_index(std::min(p, 1.0));
  if (eval.log_eval) {
    const double lp = eval.log_eval(x);
    if (lp > kNegInf) return raw_bucket_index_log(std::min(lp, 0.0));
  }
  return std::nullopt;
}

template <class K>
EllChoice empirical_ell(const Multiset<K>& ref, const EvalOracle<K>& eval, double tau,
                        std::size_t ell_max = kDefaultEllMax) {
  std::map<std::uint64_t, std::size_t> counts;
  for (const auto& [x, c] : ref) {
    const auto j = oracle_bucket(eval, x);
    counts[j ? *j : std::numeric_limits<std::uint64_t>::max()] += c;
  }
  return empirical_ell_from_counts(counts, tau, ell_max);
}

template <class K>
BucketPartition<K> bucketize(const Multiset<K>& samples, const EvalOracle<K>& eval,
                             std::size_t ell) {
  if (ell < 1) throw Error("invalid-argument", "bucketize needs ell >= 1");
  BucketPartition<K> part;
  part.ell = ell;
  part.buckets.resize(ell + 1);
  part.source_size = samples.total();
  for (const auto& [x, c] : samples) {
    const auto j = oracle_bucket(eval, x);
    if (!j) {
      part.zero_mass += c;
      part.buckets[0].add(x, c);
    } else {
      part.buckets[*j <= ell ? static_cast<std::size_t>(*j) : 0].add(x, c);
    }
  }
  const double floor_mass = std::ldexp(1.0, -static_cast<int>(std::min<std::size_t>(ell, 1074)));
  part.ref_mass.resize(ell + 1);
  for (std::size_t j = 0; j <= ell; ++j) {
    const double frac = part.source_size == 0
                            ? 0.0
                            : static_cast<double>(part.buckets[j].total()) /
                                  static_cast<double>(part.source_size);
    part.ref_mass[j] = std::max(frac, floor_mass);
  }
  return part;
}

}  // namespace anubis
