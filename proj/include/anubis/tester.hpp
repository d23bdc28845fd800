#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "anubis/bucketing.hpp"
#include "anubis/core_stats.hpp"
#include "anubis/error.hpp"
#include "anubis/multiset.hpp"
#include "anubis/oracles.hpp"
#include "anubis/random.hpp"

namespace anubis {

enum class EllMode { theoretical, empirical };

/// How a bucket's Z statistic is compared with its threshold.
///   per_sample: threshold multiplied by max((|S_i| + |T_i|) / 2, 1), putting
///               it on the same count scale as Z.
///   raw:        Z compared with the threshold directly.
enum class LocalScale { per_sample, raw };

struct TestConfig {
  double eps1 = 0.0;
  double eps2 = 0.5;
  double delta = 0.2;
  double c1 = 0.05;
  double c2 = 0.25;
  double c3 = 0.2;
  double c4 = 0.45;
  std::optional<double> delta1;  // default delta / 2
  std::optional<double> delta2;  // default delta / (2 ell)
  double tau = 0.05;
  EllMode ell_mode = EllMode::empirical;
  std::uint64_t domain_size = 0;  // needed for the theoretical ell
  std::size_t ell_max = kDefaultEllMax;
  double big_C = 1.0;
  LocalScale local_scale = LocalScale::per_sample;
  bool strict = true;

  double resolved_delta1() const { return delta1.value_or(delta / 2.0); }
  double resolved_delta2(std::size_t ell) const {
    return delta2.value_or(delta / (2.0 * static_cast<double>(ell)));
  }
};

inline const char* to_string(EllMode m) {
  return m == EllMode::theoretical ? "theoretical" : "empirical";
}
inline const char* to_string(LocalScale s) {
  return s == LocalScale::per_sample ? "per_sample" : "raw";
}

struct Violation {
  std::string code;
  double lhs = 0.0;
  double rhs = 0.0;
};

namespace detail {
inline bool leq(double a, double b) {
  return a <= b + 1e-12 * std::max({std::abs(a), std::abs(b), 1.0});
}
}  // namespace detail

/// The six constant constraints of the correctness proof; every violated one
/// is reported.
inline std::vector<Violation> validate_config(const TestConfig& cfg, std::size_t ell) {
  if (ell < 1) throw Error("invalid-argument", "validate_config needs ell >= 1");
  const double l = static_cast<double>(ell);
  std::vector<Violation> out;
  auto check = [&](const char* code, double lhs, double rhs) {
    if (!detail::leq(lhs, rhs)) out.push_back({code, lhs, rhs});
  };
  check("c1+c2+c3/2+c4<=1", cfg.c1 + cfg.c2 + cfg.c3 / 2.0 + cfg.c4, 1.0);
  check("eps1<=(c2-c1)eps2", cfg.eps1, (cfg.c2 - cfg.c1) * cfg.eps2);
  check("eps1<=c3*eps2/ell", cfg.eps1, cfg.c3 * cfg.eps2 / l);
  check("2eps1<=c4*eps2/ell", 2.0 * cfg.eps1, cfg.c4 * cfg.eps2 / l);
  check("delta1+ell*delta2<=1/5", cfg.resolved_delta1() + l * cfg.resolved_delta2(ell), 0.2);
  check("c4>=2c3", 2.0 * cfg.c3, cfg.c4);
  return out;
}

/// Range checks that do not depend on ell. Throws "invalid-config".
inline void check_config_ranges(const TestConfig& cfg) {
  auto fail = [](const std::string& what) { throw Error("invalid-config", what); };
  if (!(cfg.eps1 >= 0.0)) fail("eps1 must be >= 0");
  if (!(cfg.eps1 < cfg.eps2)) fail("eps1 must be < eps2");
  if (!(cfg.eps2 <= (cfg.strict ? 1.0 : 2.0))) fail("eps2 out of range");
  for (double c : {cfg.c1, cfg.c2, cfg.c3, cfg.c4, cfg.big_C}) {
    if (!(c > 0.0) || !std::isfinite(c)) fail("constants must be positive");
  }
  if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) fail("delta must lie in (0, 1)");
  for (const auto& d : {cfg.delta1, cfg.delta2}) {
    if (d && !(*d > 0.0 && *d < 1.0)) fail("delta1/delta2 must lie in (0, 1)");
  }
  if (!(cfg.tau > 0.0 && cfg.tau <= 1.0)) fail("tau must lie in (0, 1]");
  if (cfg.ell_max < 1) fail("ell_max must be >= 1");
  if (cfg.ell_mode == EllMode::theoretical && cfg.domain_size < 2) {
    fail("theoretical ell needs domain_size >= 2");
  }
}

inline std::string join_codes(const std::vector<Violation>& v) {
  std::string s;
  for (const auto& x : v) {
    if (!s.empty()) s += ", ";
    s += x.code;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Sample sizes
// ---------------------------------------------------------------------------

struct SamplePlan {
  std::uint64_t n1 = 0;
  std::uint64_t n2 = 0;
  double eta = 0.0;
  std::uint64_t total() const noexcept { return std::max(n1, n2); }
};

inline SamplePlan plan_sample_sizes(const TestConfig& cfg, std::size_t ell,
                                    std::uint64_t domain_size) {
  if (domain_size < 1) throw Error("invalid-argument", "domain_size must be >= 1");
  if (cfg.strict) {
    auto v = validate_config(cfg, ell);
    if (!v.empty()) throw Error("config-violation", join_codes(v));
  }
  const double l = static_cast<double>(ell);
  const double eta = std::min(((cfg.c2 - cfg.c1) * cfg.eps2 - cfg.eps1) / 4.0,
                              (cfg.c3 * cfg.eps2 - l * cfg.eps1) / (4.0 * l));
  if (!(eta > 0.0)) throw Error("infeasible-gap", "eta <= 0; eps1 too close to eps2");

  SamplePlan plan;
  plan.eta = eta;
  plan.n1 = static_cast<std::uint64_t>(
      std::ceil(8.0 / (eta * eta) * std::log(4.0 / cfg.resolved_delta1())));

  const double omega = static_cast<double>(domain_size);
  const double r = cfg.eps1 / (cfg.eps2 * cfg.eps2);
  const double c4sq = cfg.c4 * cfg.c4;
  const double poly = 16.0 * l * l / c4sq * omega * r * r + 8.0 * l / cfg.c4 * omega * r +
                      4.0 * l * l / c4sq * std::sqrt(omega) / (cfg.eps2 * cfg.eps2);
  const double lead = std::max(l / (cfg.c3 * cfg.eps2), cfg.big_C * poly);
  plan.n2 = static_cast<std::uint64_t>(std::ceil(lead * std::log(2.0 / cfg.resolved_delta2(ell))));
  return plan;
}

// ---------------------------------------------------------------------------
// Sub-tests
// ---------------------------------------------------------------------------

struct GlobalResult {
  double stat = 0.0;
  bool reject = false;
};

template <class K>
GlobalResult global_test(const BucketPartition<K>& s, const BucketPartition<K>& t, double thresh) {
  if (s.ell != t.ell) throw Error("ell-mismatch", "partitions use different ell");
  if (!(thresh > 0.0)) throw Error("invalid-argument", "global threshold must be positive");
  auto hs = s.sizes();
  auto ht = t.sizes();
  hs.erase(hs.begin());
  ht.erase(ht.begin());
  const EmpiricalHistogram h1(std::move(hs));
  const EmpiricalHistogram h2(std::move(ht));
  if (h1.total == 0 || h2.total == 0) {
    throw Error("empty-retained", "every sample fell into the leftover bucket");
  }
  GlobalResult r;
  r.stat = max_cdf_gap(h1, h2, h1.total, h2.total);
  r.reject = r.stat > thresh;
  return r;
}

struct LocalResult {
  double z = 0.0;
  bool reject = false;
};

/// Collision statistic over the distinct elements of bucketS and bucketT.
template <class K>
LocalResult local_test(const Multiset<K>& s, const Multiset<K>& t, double thresh) {
  auto is = s.begin();
  auto it = t.begin();
  double z = 0.0;
  while (is != s.end() || it != t.end()) {
    if (it == t.end() || (is != s.end() && is->first < it->first)) {
      z += collision_chi_term(is->second, 0);
      ++is;
    } else if (is == s.end() || it->first < is->first) {
      z += collision_chi_term(0, it->second);
      ++it;
    } else {
      z += collision_chi_term(is->second, it->second);
      ++is;
      ++it;
    }
  }
  return {z, z >= thresh};
}

// ---------------------------------------------------------------------------
// Composite test
// ---------------------------------------------------------------------------

enum class Verdict { accept, reject };

inline const char* to_string(Verdict v) { return v == Verdict::accept ? "accept" : "reject"; }

struct BucketReport {
  std::size_t bucket = 0;
  std::uint64_t size_s = 0;
  std::uint64_t size_t_ = 0;
  double ref_mass = 0.0;
  double z = 0.0;
  double thresh = 0.0;     // compared against z
  double thresh_l1 = 0.0;  // (c4 eps2 + 2 ell eps1) / (2 ell ref_mass)
  double scale = 1.0;
  bool reject = false;
};

struct TestReport {
  Verdict verdict = Verdict::accept;
  std::string first_failure;  // "", "global" or "bucket:<i>"
  std::size_t ell = 0;
  bool ell_capped = false;
  double eps1 = 0.0;
  double eps2 = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double global_stat = 0.0;
  double global_thresh = 0.0;
  bool global_reject = false;
  std::vector<BucketReport> per_bucket;
  double leftover_s = 0.0;
  double leftover_t = 0.0;
  std::size_t zero_mass_s = 0;
  std::size_t zero_mass_t = 0;
  std::size_t size_s = 0;
  std::size_t size_t_ = 0;
  double t_l2 = 0.0;  // empirical l2 norm of T, diagnostic only
  std::vector<Violation> violations;
  double score = 0.0;
  std::uint64_t seed = 0;

  double max_local_ratio() const {
    double r = 0.0;
    for (const auto& b : per_bucket) r = std::max(r, std::max(b.z, 0.0) / b.thresh);
    return r;
  }
};

/// max(global_stat / global_thresh, max_i max(Z_i, 0) / thresh_i).
inline double attribution_score(double global_stat, double global_thresh,
                                 const std::vector<std::pair<double, double>>& locals) {
  double s = global_stat / global_thresh;
  for (const auto& [z, th] : locals) s = std::max(s, std::max(z, 0.0) / th);
  return std::max(s, 0.0);
}

inline double attribution_score(const TestReport& r) {
  std::vector<std::pair<double, double>> locals;
  for (const auto& b : r.per_bucket) locals.emplace_back(b.z, b.thresh);
  double s = attribution_score(r.global_stat, r.global_thresh, locals);
  // ratios equal to 1 can come from ties on the accepting side
  if (r.verdict == Verdict::accept && s >= 1.0) s = std::nextafter(1.0, 0.0);
  if (r.verdict == Verdict::reject && s < 1.0) s = 1.0;
  return s;
}

template <class K>
double empirical_l2(const Multiset<K>& m) {
  if (m.empty()) return 0.0;
  const double n = static_cast<double>(m.total());
  double s = 0.0;
  for (const auto& [x, c] : m) {
    const double f = static_cast<double>(c) / n;
    s += f * f;
  }
  return std::sqrt(s);
}

template <class K>
std::size_t choose_ell(const TestConfig& cfg, const Multiset<K>& t, const EvalOracle<K>& eval,
                       bool* capped = nullptr) {
  if (cfg.ell_mode == EllMode::theoretical) {
    if (capped) *capped = false;
    return theoretical_ell(cfg.domain_size, cfg.c1, cfg.eps2);
  }
  const auto choice = empirical_ell(t, eval, cfg.tau, cfg.ell_max);
  if (capped) *capped = choice.capped;
  return choice.ell;
}

/// Runs the composite test on a sample set S against a reference sample T,
/// bucketing both with the reference EVAL oracle.
template <class K>
TestReport anubis_test(const Multiset<K>& s, const Multiset<K>& t, const EvalOracle<K>& eval,
                       const TestConfig& cfg) {
  check_config_ranges(cfg);
  if (s.empty()) throw Error("empty-sample", "S is empty");
  if (t.empty()) throw Error("empty-reference", "T is empty");

  TestReport rep;
  rep.ell = choose_ell(cfg, t, eval, &rep.ell_capped);
  rep.violations = validate_config(cfg, rep.ell);
  if (cfg.strict && !rep.violations.empty()) {
    throw Error("config-violation", join_codes(rep.violations));
  }
  const std::size_t ell = rep.ell;
  const double l = static_cast<double>(ell);
  rep.eps1 = cfg.eps1;
  rep.eps2 = cfg.eps2;
  rep.delta1 = cfg.resolved_delta1();
  rep.delta2 = cfg.resolved_delta2(ell);
  rep.size_s = s.total();
  rep.size_t_ = t.total();
  rep.t_l2 = empirical_l2(t);

  const auto part_t = bucketize(t, eval, ell);
  const auto part_s = bucketize(s, eval, ell);
  rep.leftover_s = part_s.leftover_fraction();
  rep.leftover_t = part_t.leftover_fraction();
  rep.zero_mass_s = part_s.zero_mass;
  rep.zero_mass_t = part_t.zero_mass;

  rep.global_thresh = (cfg.c3 * cfg.eps2 + l * cfg.eps1) / (2.0 * l);
  const auto g = global_test(part_s, part_t, rep.global_thresh);
  rep.global_stat = g.stat;
  rep.global_reject = g.reject;
  if (g.reject) rep.first_failure = "global";

  for (std::size_t i = 1; i <= ell; ++i) {
    BucketReport b;
    b.bucket = i;
    b.size_s = part_s.buckets[i].total();
    b.size_t_ = part_t.buckets[i].total();
    b.ref_mass = part_t.ref_mass[i];
    b.thresh_l1 = (cfg.c4 * cfg.eps2 + 2.0 * l * cfg.eps1) / (2.0 * l * b.ref_mass);
    if (cfg.local_scale == LocalScale::per_sample) {
      b.scale = std::max(static_cast<double>(b.size_s + b.size_t_) / 2.0, 1.0);
    }
    b.thresh = b.thresh_l1 * b.scale;
    const auto loc = local_test(part_s.buckets[i], part_t.buckets[i], b.thresh);
    b.z = loc.z;
    b.reject = loc.reject;
    if (b.reject && rep.first_failure.empty()) rep.first_failure = "bucket:" + std::to_string(i);
    rep.per_bucket.push_back(b);
  }
  rep.verdict = rep.first_failure.empty() ? Verdict::accept : Verdict::reject;
  rep.score = attribution_score(rep);
  return rep;
}

/// Oracle form: draws |S| reference samples from SAMP, after every check
/// that does not depend on the sample.
template <class K>
TestReport anubis_test(const Multiset<K>& s, const OraclePair<K>& ref, const TestConfig& cfg,
                       Rng& rng) {
  check_config_ranges(cfg);
  if (s.empty()) throw Error("empty-sample", "S is empty");
  if (cfg.ell_mode == EllMode::theoretical && cfg.strict) {
    const auto v = validate_config(cfg, theoretical_ell(cfg.domain_size, cfg.c1, cfg.eps2));
    if (!v.empty()) throw Error("config-violation", join_codes(v));
  }
  const auto t = ref.samp.draw_multiset(s.total(), rng);
  return anubis_test(s, t, ref.eval, cfg);
}

// ---------------------------------------------------------------------------

struct EpsilonPair {
  double eps1 = 0.0;
  double eps2 = 0.0;
};

/// Radii for "at least ub% from the target" vs "at most lb%", given the l1
/// distance between the target and the alternative source.
inline EpsilonPair lbub_to_epsilons(double lb_pct, double ub_pct, double separation) {
  if (!(lb_pct >= 0.0 && lb_pct < ub_pct && ub_pct <= 100.0)) {
    throw Error("invalid-argument", "need 0 <= lb < ub <= 100");
  }
  if (!(separation > 0.0 && separation <= 2.0)) {
    throw Error("invalid-argument", "separation must lie in (0, 2]");
  }
  return {(1.0 - ub_pct / 100.0) * separation, (1.0 - lb_pct / 100.0) * separation};
}

}  // namespace anubis
