#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "anubis/bucketing.hpp"
#include "test_util.hpp"

using namespace anubis;

namespace {

EvalOracle<int> table_oracle(std::map<int, double> probs) {
  EvalOracle<int> o;
  o.eval = [probs](int x) {
    auto it = probs.find(x);
    return it == probs.end() ? 0.0 : it->second;
  };
  return o;
}

bool in_interval(double p, std::uint64_t j) {
  return p > std::ldexp(1.0, -static_cast<int>(j)) && p <= std::ldexp(1.0, 1 - static_cast<int>(j));
}

}  // namespace

TEST(BucketIndex, Examples) {
  EXPECT_EQ(raw_bucket_index(1.0), 1u);
  EXPECT_EQ(raw_bucket_index(0.75), 1u);
  EXPECT_EQ(raw_bucket_index(0.5), 2u);
  EXPECT_EQ(raw_bucket_index(0.3), 2u);
  EXPECT_EQ(raw_bucket_index(0.25), 3u);
  EXPECT_EQ(raw_bucket_index(0.01), 7u);
  EXPECT_EQ(raw_bucket_index(std::nextafter(0.5, 1.0)), 1u);
  EXPECT_EQ(raw_bucket_index(std::numeric_limits<double>::denorm_min()), 1075u);
  EXPECT_EQ(bucket_index(0.01, 6), 0u);
  EXPECT_EQ(bucket_index(0.01, 7), 7u);
  EXPECT_EQ(bucket_index(std::ldexp(1.0, -6), 6), 0u);
}

TEST(BucketIndex, Errors) {
  try {
    raw_bucket_index(0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "nonpositive-probability");
  }
  EXPECT_THROW(raw_bucket_index(-0.1), Error);
  EXPECT_THROW(raw_bucket_index(NAN), Error);
  try {
    raw_bucket_index(1.0000001);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "invalid-probability");
  }
}

TEST(BucketIndex, IntervalSoundnessOnRandomProbabilities) {
  Rng rng(17);
  for (int i = 0; i < 100000; ++i) {
    double p;
    switch (i % 4) {
      case 0: p = uniform01(rng); break;
      case 1: p = std::exp(-700.0 * uniform01(rng)); break;
      case 2: p = std::ldexp(1.0, -static_cast<int>(anubis::testing::uniform_index(rng, 1070))); break;
      default: p = std::nextafter(std::ldexp(1.0, -static_cast<int>(anubis::testing::uniform_index(rng, 1000))), 0.0); break;
    }
    if (p <= 0.0) continue;
    const auto j = raw_bucket_index(p);
    ASSERT_TRUE(in_interval(p, j)) << p << " -> " << j;
  }
}

TEST(BucketIndex, LogFormAgreesAndHandlesUnderflow) {
  for (double p : {1.0, 0.5, 0.3, 1e-10, 1e-300}) {
    EXPECT_EQ(raw_bucket_index_log(std::log(p)), raw_bucket_index(p)) << p;
  }
  // exp(-2000) underflows; -2000 / ln 2 = -2885.39
  EXPECT_EQ(raw_bucket_index_log(-2000.0), 2886u);
  EXPECT_THROW(raw_bucket_index_log(kNegInf), Error);
  EXPECT_THROW(raw_bucket_index_log(0.1), Error);
}

TEST(TheoreticalEll, FrozenValues) {
  EXPECT_EQ(theoretical_ell(2, 1.0, 1.0), 2u);
  EXPECT_EQ(theoretical_ell(1024, 1.0, 1.0), 11u);
  EXPECT_EQ(theoretical_ell(1024, 0.5, 0.5), 13u);
  EXPECT_EQ(theoretical_ell(512, 0.05, 0.5), 15u);
  EXPECT_THROW(theoretical_ell(1, 1.0, 1.0), Error);
  EXPECT_THROW(theoretical_ell(10, 0.0, 0.5), Error);
}

TEST(TheoreticalEll, LeftoverMassBelowC1Eps2) {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(anubis::testing::uniform_index(rng, 600));
    const double c1 = 0.01 + 0.5 * uniform01(rng);
    const double eps2 = 0.05 + 0.95 * uniform01(rng);
    const auto p = anubis::testing::random_pmf(rng, n, 0.2);
    const auto ell = theoretical_ell(static_cast<std::uint64_t>(n), c1, eps2);
    const double cut = c1 * eps2 / n;
    double leftover = 0.0;
    for (const auto& [x, w] : p.weights()) {
      if (w > 0.0 && bucket_index(w, ell) == 0) {
        EXPECT_LT(w, cut);
        leftover += w;
      }
    }
    EXPECT_LE(leftover, c1 * eps2);
  }
}

TEST(EmpiricalEll, FrozenValue) {
  const std::vector<double> probs{0.6, 0.3, 0.01, 0.001};
  const auto c = empirical_ell(probs, 0.25);
  EXPECT_EQ(c.ell, 7u);
  EXPECT_FALSE(c.capped);
  EXPECT_EQ(empirical_ell(probs, 1.0).ell, 1u);
  EXPECT_EQ(empirical_ell(probs, 0.01).ell, 10u);
}

TEST(EmpiricalEll, CappedAndErrors) {
  const std::vector<double> probs{1e-300};
  const auto c = empirical_ell(probs, 0.5, 64);
  EXPECT_EQ(c.ell, 64u);
  EXPECT_TRUE(c.capped);
  const std::vector<double> none;
  EXPECT_THROW(empirical_ell(none, 0.5), Error);
  EXPECT_THROW(empirical_ell(probs, 0.0), Error);
}

TEST(EmpiricalEll, MonotoneInTau) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> probs;
    const auto n = 1 + anubis::testing::uniform_index(rng, 200);
    for (std::size_t i = 0; i < n; ++i) probs.push_back(std::exp(-40.0 * uniform01(rng)));
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double tau : {0.01, 0.05, 0.1, 0.3, 0.6, 1.0}) {
      const auto e = empirical_ell(probs, tau).ell;
      EXPECT_LE(e, prev);
      prev = e;
      std::size_t above = 0;
      for (double p : probs) above += raw_bucket_index(p) > e;
      EXPECT_LE(static_cast<double>(above) / n, tau);
      if (e > 1) {
        std::size_t above_prev = 0;
        for (double p : probs) above_prev += raw_bucket_index(p) > e - 1;
        EXPECT_GT(static_cast<double>(above_prev) / n, tau);
      }
    }
  }
}

TEST(Bucketize, MixedExample) {
  const auto o = table_oracle({{1, 0.6}, {2, 0.7}, {3, 0.9}, {4, 0.3}, {5, 0.4}, {6, 0.01}, {7, 0.0}});
  Multiset<int> s;
  for (int x = 1; x <= 6; ++x) s.add(x);
  const auto part = bucketize(s, o, 2);
  EXPECT_EQ(part.sizes(), (std::vector<std::uint64_t>{1, 3, 2}));
  EXPECT_EQ(part.retained(), 5u);
  EXPECT_DOUBLE_EQ(part.leftover_fraction(), 1.0 / 6.0);
  EXPECT_DOUBLE_EQ(part.ref_mass[1], 0.5);
  EXPECT_DOUBLE_EQ(part.ref_mass[2], 1.0 / 3.0);

  s.add(7, 2);
  const auto with_zero = bucketize(s, o, 2);
  EXPECT_EQ(with_zero.zero_mass, 2u);
  EXPECT_EQ(with_zero.buckets[0].count(7), 2u);
}

TEST(Bucketize, RefMassFloor) {
  const auto o = table_oracle({{1, 0.9}});
  Multiset<int> s;
  s.add(1, 4);
  const auto part = bucketize(s, o, 5);
  EXPECT_DOUBLE_EQ(part.ref_mass[1], 1.0);
  EXPECT_DOUBLE_EQ(part.ref_mass[3], std::ldexp(1.0, -5));
}

TEST(Bucketize, UnderflowUsesLogProbability) {
  EvalOracle<int> o;
  o.eval = [](int) { return 0.0; };
  o.log_eval = [](int x) { return x == 0 ? kNegInf : -800.0; };
  Multiset<int> s;
  s.add(0);
  s.add(1, 3);
  const auto part = bucketize(s, o, 2000);
  EXPECT_EQ(part.zero_mass, 1u);
  EXPECT_EQ(part.buckets[raw_bucket_index_log(-800.0)].total(), 3u);
}

TEST(Bucketize, ClampsApproximateValuesAboveOne) {
  const auto o = table_oracle({{1, 1.1}});
  Multiset<int> s;
  s.add(1);
  EXPECT_EQ(bucketize(s, o, 3).buckets[1].total(), 1u);
}

TEST(Bucketize, PartitionProperty) {
  Rng rng(41);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(anubis::testing::uniform_index(rng, 80));
    const auto p = anubis::testing::random_pmf(rng, k, 0.2);
    const auto o = exact_oracle(p);
    const auto s = o.samp.draw_multiset(1 + anubis::testing::uniform_index(rng, 500), rng);
    const std::size_t ell = 1 + anubis::testing::uniform_index(rng, 20);
    const auto part = bucketize(s, o.eval, ell);
    ASSERT_EQ(part.buckets.size(), ell + 1);
    Multiset<int> merged;
    for (std::size_t j = 0; j <= ell; ++j) {
      merged.merge(part.buckets[j]);
      for (const auto& [x, c] : part.buckets[j]) {
        EXPECT_EQ(bucket_index(p(x), ell), j);
      }
    }
    EXPECT_EQ(merged, s);
  }
}
