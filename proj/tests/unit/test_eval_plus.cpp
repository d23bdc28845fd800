#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "anubis/eval_plus.hpp"
#include "anubis/toy_model.hpp"
#include "test_util.hpp"
#include "toy_fixtures.hpp"

using namespace anubis;
using anubis::testing::ab_spec;
using anubis::testing::model_ab;

namespace {

EvalPlusOptions opts(std::size_t depth, EvalPlusMode mode = EvalPlusMode::candidate_union) {
  EvalPlusOptions o;
  o.depth = depth;
  o.mode = mode;
  return o;
}

std::vector<std::string> all_strings(const std::string& alphabet, std::size_t max_len) {
  std::vector<std::string> out{""};
  std::size_t start = 0;
  for (std::size_t len = 1; len <= max_len; ++len) {
    const std::size_t end = out.size();
    for (std::size_t i = start; i < end; ++i) {
      for (char c : alphabet) out.push_back(out[i] + c);
    }
    start = end;
  }
  return out;
}

}  // namespace

TEST(EvalPlus, CollisionExample) {
  const auto spec = ab_spec();
  const auto m = model_ab();
  // (3) = "ab" collides with (1, 2); .1 * .4 + .3 * .3 * .5
  EXPECT_NEAR(eval_plus(m, spec, {3}, opts(2)).prob, 0.085, 1e-15);
  EXPECT_EQ(eval_plus(m, spec, {3}, opts(2)).candidates, 2u);
  EXPECT_NEAR(eval_plus(m, spec, {3}, opts(1)).prob, 0.04, 1e-15);
  EXPECT_NEAR(eval_plus(m, spec, {1, 2}, opts(2)).prob, 0.085, 1e-15);
  EXPECT_NEAR(eval_plus_text(m, spec, "ab", opts(2)).prob, 0.085, 1e-15);
}

TEST(EvalPlus, EmptyAndTrailingEos) {
  const auto spec = ab_spec();
  const auto m = model_ab();
  EXPECT_NEAR(eval_plus(m, spec, {}, opts(2)).prob, 0.4, 1e-15);
  EXPECT_NEAR(eval_plus(m, spec, {4}, opts(2)).prob, 0.4, 1e-15);
  EXPECT_EQ(eval_plus(m, spec, {3, 4}, opts(2)).log_prob, eval_plus(m, spec, {3}, opts(2)).log_prob);
}

TEST(EvalPlus, Errors) {
  const auto spec = ab_spec();
  const auto m = model_ab();
  EXPECT_THROW(eval_plus(m, spec, {1, 4, 2}, opts(2)), Error);
  EXPECT_THROW(eval_plus(m, spec, {7}, opts(2)), Error);
  EXPECT_THROW(eval_plus(m, spec, {1}, opts(0)), Error);
  EXPECT_THROW(parse_eval_plus_mode("bogus"), Error);
  EXPECT_EQ(parse_eval_plus_mode("conditioned"), EvalPlusMode::conditioned);
  EXPECT_EQ(parse_eval_plus_mode(to_string(EvalPlusMode::as_written)), EvalPlusMode::as_written);
}

TEST(EvalPlus, LowerBoundOnExactMass) {
  const auto spec = ab_spec();
  const auto m = model_ab();
  for (const auto& text : all_strings("ab", 6)) {
    const double exact = exact_text_prob(m, spec, text, m.max_len());
    for (std::size_t d = 1; d <= 4; ++d) {
      const double e = eval_plus_text(m, spec, text, opts(d)).prob;
      EXPECT_LE(e, exact * (1 + 1e-12)) << text << " d=" << d;
      EXPECT_GT(e, 0.0) << text;
    }
    // six characters never need more than six tokens
    EXPECT_NEAR(eval_plus_text(m, spec, text, opts(6)).prob, exact, 1e-15) << text;
  }
}

TEST(EvalPlus, RecursiveModesOvercount) {
  const auto spec = anubis::testing::xy_spec();
  const auto m = anubis::testing::model_a();
  const TokenSeq sigma{1, 2, 1};
  const double exact = std::exp(seq_log_prob(m, sigma, true));
  EXPECT_NEAR(eval_plus(m, spec, sigma, opts(2)).prob, exact, 1e-15);
  // both split points reproduce the single sequence
  EXPECT_NEAR(eval_plus(m, spec, sigma, opts(2, EvalPlusMode::conditioned)).prob, 2 * exact, 1e-15);
  EXPECT_NEAR(eval_plus(m, spec, sigma, opts(1, EvalPlusMode::conditioned)).prob, exact, 1e-15);
  EXPECT_GT(std::abs(eval_plus(m, spec, sigma, opts(2, EvalPlusMode::as_written)).prob - exact), 1e-6);
}

TEST(EvalPlus, DepthDiagnostics) {
  // no mode is monotone in d (a larger d stops splitting short tails, which
  // drops some long sequences); logged for inspection only
  const auto spec = ab_spec();
  const auto m = model_ab();
  for (auto mode : {EvalPlusMode::as_written, EvalPlusMode::conditioned, EvalPlusMode::candidate_union}) {
    for (const char* text : {"abab", "aab"}) {
      std::string line = std::string(to_string(mode)) + " " + text + ":";
      for (std::size_t d = 1; d <= 4; ++d) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.6g", eval_plus_text(m, spec, text, opts(d, mode)).prob);
        line += buf;
      }
      RecordProperty(std::string(to_string(mode)) + "_" + text, line);
    }
  }
}

TEST(EvalPlus, SearchModesAgree) {
  const auto spec = ab_spec();
  const auto m = model_ab();
  for (const auto& text : all_strings("ab", 5)) {
    auto brute = opts(3);
    brute.search = CollisionSearch::brute_force;
    EXPECT_EQ(eval_plus_text(m, spec, text, opts(3)).log_prob,
              eval_plus_text(m, spec, text, brute).log_prob);
  }
}

TEST(EvalPlus, CandidateBudget) {
  const auto spec = ab_spec();
  const auto m = model_ab();
  auto o = opts(3);
  const std::string text = "abababababab";
  const auto full = eval_plus_text(m, spec, text, o);
  EXPECT_EQ(full.candidates, 3u);
  o.max_candidates = 2;
  try {
    eval_plus_text(m, spec, text, o);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "eval-plus-intractable");
  }
}
