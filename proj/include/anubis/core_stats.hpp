#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anubis/error.hpp"

namespace anubis {

inline constexpr double kPmfSumTolerance = 1e-9;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Log-space helpers (natural log).

inline double log_add(double a, double b) noexcept {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

inline double log_sum_exp(std::span<const double> xs) noexcept {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

// ---------------------------------------------------------------------------
// Pmf
// ---------------------------------------------------------------------------

/// Explicit finite distribution. Keys with zero weight are allowed and kept;
/// `domain_size` may exceed the number of stored keys when the domain has
/// elements of mass zero that are never listed.
template <class K>
class Pmf {
 public:
  using key_type = K;
  using container = std::map<K, double>;

  Pmf() = default;

  explicit Pmf(container weights, std::optional<std::size_t> domain_size = std::nullopt)
      : weights_(std::move(weights)) {
    double sum = 0.0;
    std::size_t positive = 0;
    for (const auto& [x, w] : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw Error("invalid-pmf", "weights must be finite and nonnegative");
      }
      sum += w;
      if (w > 0.0) ++positive;
    }
    if (std::abs(sum - 1.0) > kPmfSumTolerance) {
      throw Error("invalid-pmf", "weights sum to " + std::to_string(sum));
    }
    domain_size_ = domain_size.value_or(weights_.size());
    if (domain_size_ < positive) {
      throw Error("invalid-pmf", "domain_size smaller than the support");
    }
  }

  /// Rescales nonnegative weights to sum to one.
  static Pmf normalized(container weights, std::optional<std::size_t> domain_size = std::nullopt) {
    double sum = 0.0;
    for (const auto& [x, w] : weights) sum += w;
    if (!(sum > 0.0)) throw Error("invalid-pmf", "total weight must be positive");
    for (auto& [x, w] : weights) w /= sum;
    return Pmf(std::move(weights), domain_size);
  }

  double operator()(const K& x) const {
    auto it = weights_.find(x);
    return it == weights_.end() ? 0.0 : it->second;
  }

  template <class Range>
  double mass_of(const Range& subset) const {
    double s = 0.0;
    for (const auto& x : subset) s += (*this)(x);
    return s;
  }

  const container& weights() const noexcept { return weights_; }
  std::size_t domain_size() const noexcept { return domain_size_; }
  std::size_t support_size() const noexcept {
    return static_cast<std::size_t>(std::count_if(
        weights_.begin(), weights_.end(), [](const auto& kv) { return kv.second > 0.0; }));
  }

 private:
  container weights_;
  std::size_t domain_size_ = 0;
};

/// Plain per-category counts, e.g. the bucket sizes |Delta_1..Delta_l|.
struct EmpiricalHistogram {
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  EmpiricalHistogram() = default;
  explicit EmpiricalHistogram(std::vector<std::uint64_t> c) : counts(std::move(c)) {
    for (auto v : counts) total += v;
  }

  std::size_t categories() const noexcept { return counts.size(); }
};

/// Sum of |p(x) - q(x)| over the union of supports; missing keys have mass 0.
template <class K>
double l1_distance(const Pmf<K>& p, const Pmf<K>& q) {
  const auto& a = p.weights();
  const auto& b = q.weights();
  auto ia = a.begin();
  auto ib = b.begin();
  double s = 0.0;
  while (ia != a.end() || ib != b.end()) {
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      s += ia->second;
      ++ia;
    } else if (ia == a.end() || ib->first < ia->first) {
      s += ib->second;
      ++ib;
    } else {
      s += std::abs(ia->second - ib->second);
      ++ia;
      ++ib;
    }
  }
  return s;
}

/// p conditioned on `subset`: result(x) = p(x) / p(subset) for x in subset.
template <class K, class Range>
Pmf<K> conditional(const Pmf<K>& p, const Range& subset) {
  typename Pmf<K>::container out;
  for (const auto& x : subset) out.emplace(x, p(x));
  double mass = 0.0;
  for (const auto& [x, w] : out) mass += w;
  if (!(mass > 0.0)) throw Error("empty-condition", "conditioning set has zero mass");
  for (auto& [x, w] : out) w /= mass;
  return Pmf<K>(std::move(out), out.size());
}

/// Deviation at which the two-sided DKW bound with Massart's constant,
/// 2 exp(-2 m eps^2), equals delta.
inline double dkw_epsilon(std::uint64_t m, double delta) {
  if (m == 0) throw Error("invalid-argument", "dkw_epsilon needs m >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw Error("invalid-argument", "delta must lie in (0, 1)");
  return std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(m)));
}

/// max_i |CDF1(i) - CDF2(i)| where each CDF is normalized by its own count.
inline double max_cdf_gap(const EmpiricalHistogram& h1, const EmpiricalHistogram& h2,
                          std::uint64_t norm1, std::uint64_t norm2) {
  if (h1.categories() != h2.categories()) {
    throw Error("category-mismatch", "histograms have different category counts");
  }
  if (norm1 == 0 || norm2 == 0) throw Error("invalid-norm", "normalizers must be >= 1");
  std::uint64_t c1 = 0, c2 = 0;
  double gap = 0.0;
  for (std::size_t i = 0; i < h1.categories(); ++i) {
    c1 += h1.counts[i];
    c2 += h2.counts[i];
    const double d = static_cast<double>(c1) / static_cast<double>(norm1) -
                     static_cast<double>(c2) / static_cast<double>(norm2);
    gap = std::max(gap, std::abs(d));
  }
  return gap;
}

/// Gap between an empirical CDF and an exact one given by category masses.
inline double max_cdf_gap(const EmpiricalHistogram& h, std::uint64_t norm,
                          std::span<const double> probs) {
  if (h.categories() != probs.size()) {
    throw Error("category-mismatch", "histogram and pmf have different category counts");
  }
  if (norm == 0) throw Error("invalid-norm", "normalizer must be >= 1");
  std::uint64_t c = 0;
  double cum = 0.0;
  double gap = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    c += h.counts[i];
    cum += probs[i];
    gap = std::max(gap, std::abs(static_cast<double>(c) / static_cast<double>(norm) - cum));
  }
  return gap;
}

/// One term of the collision chi-square statistic.
inline double collision_chi_term(std::uint64_t z1, std::uint64_t z2) noexcept {
  const double a = static_cast<double>(z1);
  const double b = static_cast<double>(z2);
  const double diff = a - b;
  return (diff * diff - a - b) / std::max(a + b, 1.0);
}

/// Mann-Whitney AUROC: fraction of (pos, neg) pairs with pos > neg, ties 1/2.
///
/// The half-unit count is an integer; the smaller of the two complementary
/// fractions is always the one divided out, so auroc(a,b) + auroc(b,a) is
/// exactly 1 in IEEE arithmetic.
inline double auroc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw Error("empty-class", "auroc needs both classes");
  auto finite = [](double v) { return !std::isnan(v); };
  if (!std::all_of(pos.begin(), pos.end(), finite) || !std::all_of(neg.begin(), neg.end(), finite)) {
    throw Error("invalid-score", "auroc scores must not be NaN");
  }
  std::vector<double> sorted_neg(neg.begin(), neg.end());
  std::sort(sorted_neg.begin(), sorted_neg.end());
  std::uint64_t half_units = 0;
  for (double p : pos) {
    auto lo = std::lower_bound(sorted_neg.begin(), sorted_neg.end(), p);
    auto hi = std::upper_bound(lo, sorted_neg.end(), p);
    half_units += 2 * static_cast<std::uint64_t>(lo - sorted_neg.begin()) +
                  static_cast<std::uint64_t>(hi - lo);
  }
  const std::uint64_t pairs = static_cast<std::uint64_t>(pos.size()) * neg.size();
  const std::uint64_t all_units = 2 * pairs;
  if (2 * half_units == all_units) return 0.5;
  if (2 * half_units < all_units) {
    return static_cast<double>(half_units) / static_cast<double>(all_units);
  }
  return 1.0 - static_cast<double>(all_units - half_units) / static_cast<double>(all_units);
}

}  // namespace anubis
