#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "anubis/contaminate.hpp"
#include "anubis/experiment.hpp"
#include "anubis/kv_config.hpp"

using namespace anubis;

namespace {

const std::string kToy = ANUBIS_TOY_DIR;

std::vector<KvEntry> kv(const std::string& text) {
  std::istringstream in(text);
  return parse_kv(in);
}

std::string grid_error(const std::string& text) {
  try {
    parse_grid(kv(text), kToy);
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

std::string results_text(const std::vector<ResultRow>& rows) {
  std::ostringstream o;
  write_results(o, rows);
  return o.str();
}

std::string auroc_text(const std::vector<ResultRow>& rows) {
  std::ostringstream o;
  write_auroc(o, summarize_auroc(rows));
  return o.str();
}

ResultRow row(double lb, double ub, double gamma, long rep, double score) {
  ResultRow r;
  r.group = "g";
  r.lb = lb;
  r.ub = ub;
  r.n = 10;
  r.gamma = gamma;
  r.rep = rep;
  r.cls = classify(gamma, lb, ub);
  r.status = "ok";
  r.ell = 3;
  r.verdict = score >= 1.0 ? "reject" : "accept";
  r.score = score;
  r.seed = 14612309854384608660ull;
  return r;
}

const std::string kMinimal =
    "target_model = target.model\nadversary_model = adversary.model\n"
    "gammas = 0, 90\nlbub = 10:90\nsample_counts = 50\n";

}  // namespace

TEST(Classify, FullGammaGrid) {
  struct Case {
    double lb, ub;
    std::vector<int> positive, negative;
  };
  const std::vector<Case> cases{
      {10, 80, {0, 10, 20}, {90}},
      {10, 90, {0, 10}, {90}},
      {10, 100, {0}, {90}},
      {20, 90, {0, 10}, {80, 90}},
      {20, 100, {0}, {80, 90}},
      {30, 100, {0}, {70, 80, 90}},
  };
  for (const auto& c : cases) {
    for (int g = 0; g <= 100; g += 10) {
      const auto cls = classify(g, c.lb, c.ub);
      const bool pos = std::count(c.positive.begin(), c.positive.end(), g) > 0;
      const bool neg = std::count(c.negative.begin(), c.negative.end(), g) > 0 || g == 100;
      EXPECT_EQ(cls == RunClass::positive, pos) << c.lb << ":" << c.ub << " gamma " << g;
      EXPECT_EQ(cls == RunClass::negative, neg) << c.lb << ":" << c.ub << " gamma " << g;
    }
  }
}

TEST(ReplacedCount, Examples) {
  EXPECT_EQ(replaced_count(10, 1000), 100u);
  EXPECT_EQ(replaced_count(70, 10), 7u);
  EXPECT_EQ(replaced_count(0, 10), 0u);
  EXPECT_EQ(replaced_count(100, 10), 10u);
  EXPECT_EQ(replaced_count(33, 10), 3u);
  EXPECT_EQ(replaced_count(29, 100), 29u);
  EXPECT_THROW(replaced_count(101, 10), Error);
}

TEST(Auroc, HandBuiltCell) {
  // positives score .2 and .6, negatives .5 and 1.4
  const std::vector<ResultRow> rows{row(10, 90, 0, 0, 0.2), row(10, 90, 0, 1, 0.6),
                                    row(10, 90, 90, 0, 0.5), row(10, 90, 90, 1, 1.4),
                                    row(20, 100, 0, 0, 0.1)};
  const auto a = summarize_auroc(rows);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].lb, "10");
  EXPECT_EQ(a[0].positives, 2u);
  EXPECT_EQ(a[0].negatives, 2u);
  EXPECT_EQ(*a[0].auroc, 0.75);
  EXPECT_FALSE(a[1].auroc);
  EXPECT_EQ(a[2].lb, "all");
  EXPECT_EQ(a[2].positives, 3u);
  EXPECT_NEAR(*a[2].auroc, 5.0 / 6.0, 1e-15);
  EXPECT_NE(auroc_text(rows).find("undefined"), std::string::npos);
}

TEST(Results, RoundTripKeepsAurocTable) {
  std::vector<ResultRow> rows{row(10, 90, 0, 0, 0.123456789012345), row(10, 90, 90, 0, 1.5),
                              row(10, 90, 90, 1, 0.999999999999)};
  ResultRow oob = row(10, 90, 50, -1, 0);
  oob.status = "out-of-hypothesis";
  rows.push_back(oob);
  ResultRow err = row(10, 90, 0, 1, 0);
  err.status = "error:empty-retained";
  rows.push_back(err);
  const auto text = results_text(rows);
  std::istringstream in(text);
  const auto back = read_results(in);
  EXPECT_EQ(results_text(back), text);
  EXPECT_EQ(auroc_text(back), auroc_text(rows));
}

TEST(Results, ReadErrors) {
  auto bad = [](const std::string& text) {
    std::istringstream in(text);
    try {
      read_results(in);
    } catch (const Error& e) {
      return e.code() == "results-format";
    }
    return false;
  };
  EXPECT_TRUE(bad("nope\n"));
  EXPECT_TRUE(bad(std::string(kResultsHeader) + "\ng\t1\t2\n"));
  EXPECT_TRUE(bad(std::string(kResultsHeader) + "\ng\tx\t90\t10\t0\t0\t100\tpositive\tok\t3\taccept\t0.5\t0\t0\t0\t1\n"));
  EXPECT_TRUE(bad(std::string(kResultsHeader) + "\ng\t10\t90\t10\t0\t0\t100\tmaybe\tok\t3\taccept\t0.5\t0\t0\t0\t1\n"));
  EXPECT_FALSE(bad(std::string(kResultsHeader) + "\n"));
}

TEST(Grid, ParseErrors) {
  EXPECT_EQ(grid_error(kMinimal), "");
  EXPECT_EQ(grid_error("lbub = 10:90\nsample_counts = 5\ntarget_model = a\nadversary_model = b\n"), "grid-format");
  EXPECT_EQ(grid_error(kMinimal + "lbub = 90:10\n"), "config-format");  // duplicate key
  EXPECT_EQ(grid_error("gammas = 0\nlbub = 90:10\nsample_counts = 5\ntarget_model = a\nadversary_model = b\n"),
            "grid-format");
  EXPECT_EQ(grid_error("gammas = 120\nlbub = 10:90\nsample_counts = 5\ntarget_model = a\nadversary_model = b\n"),
            "grid-format");
  EXPECT_EQ(grid_error(kMinimal + "colour = red\n"), "grid-format");
  EXPECT_EQ(grid_error(kMinimal + "separation = 3\n"), "grid-format");
  EXPECT_EQ(grid_error(kMinimal + "repetitions = 0\n"), "grid-format");
  EXPECT_EQ(grid_error(kMinimal + "eval_plus_mode = sideways\n"), "invalid-argument");
  EXPECT_EQ(grid_error("gammas = 0\nlbub = 10:90\nsample_counts = 5\ntarget_pool = p.jsonl\n"), "grid-format");
  EXPECT_EQ(grid_error(kMinimal + "eps2 = x\n"), "config-format");
}

TEST(Grid, PathsConfigAndOverrides) {
  const auto g = parse_grid(kv(kMinimal + "config = default.cfg\ntau = 0.1\ndepth = 2\n"), kToy);
  EXPECT_EQ(g.target_model, kToy + "/target.model");
  EXPECT_EQ(g.config.tau, 0.1);
  EXPECT_EQ(g.depth, 2u);
  EXPECT_FALSE(g.separation);
  EXPECT_EQ(g.repetitions, 1u);

  auto h = parse_grid(kv(kMinimal + "seed = 5\n"), kToy);
  ::setenv("ANUBIS_SEED", "99", 1);
  apply_seed_override(h);
  EXPECT_EQ(h.seed, 99u);
  ::setenv("ANUBIS_SEED", "-1", 1);
  EXPECT_THROW(apply_seed_override(h), Error);
  ::unsetenv("ANUBIS_SEED");
  apply_seed_override(h);
  EXPECT_EQ(h.seed, 99u);
}

TEST(Config, KvFiles) {
  EXPECT_THROW(kv("a = 1\na = 2\n"), Error);
  EXPECT_THROW(kv("just words\n"), Error);
  EXPECT_THROW(kv(" = 3\n"), Error);
  const auto cfg = load_test_config(kToy + "/default.cfg");
  EXPECT_EQ(cfg.eps2, TestConfig{}.eps2);
  EXPECT_TRUE(cfg.strict);

  TestConfig c;
  c.eps1 = 0.01;
  c.delta2 = 0.003;
  c.ell_mode = EllMode::theoretical;
  c.domain_size = 77;
  c.local_scale = LocalScale::raw;
  c.strict = false;
  const std::string path = ::testing::TempDir() + "/anubis_cfg_roundtrip.cfg";
  std::ofstream(path) << dump_config(c);
  EXPECT_EQ(dump_config(load_test_config(path)), dump_config(c));

  TestConfig d;
  EXPECT_THROW(apply_config_entry(d, {"ell_mode", "guess", 1}), Error);
  EXPECT_THROW(apply_config_entry(d, {"strict", "maybe", 1}), Error);
  EXPECT_THROW(apply_config_entry(d, {"ell_max", "-3", 1}), Error);
  EXPECT_FALSE(apply_config_entry(d, {"colour", "red", 1}));
}

TEST(Contaminate, ReplacesExactlyTheRequestedShare) {
  const auto t = load_model_bundle(kToy + "/target.model");
  const auto a = load_model_bundle(kToy + "/adversary.model");
  const TextScorer ts(t.model, t.spec), as(a.model, t.spec);
  for (double gamma : {0.0, 30.0, 100.0}) {
    Rng rng(5);
    const auto data = make_contaminated_dataset(ts, as, t.spec, gamma, 200, rng);
    ASSERT_EQ(data.size(), 200u);
    std::size_t adv = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto& s = data[i];
      EXPECT_EQ(s.id, "s" + std::to_string(i));
      EXPECT_EQ(t.spec.decode(s.tokens), s.text);
      ASSERT_TRUE(s.logprob.at("target"));
      ASSERT_TRUE(s.logprob.at("adversary"));
      EXPECT_LE(*s.logprob.at("target"), 0.0);
      adv += *s.provenance == "adversary";
    }
    EXPECT_EQ(adv, replaced_count(gamma, 200));
  }
  EXPECT_THROW({
    Rng rng(1);
    make_contaminated_dataset(ts, ts, t.spec, 10, 5, rng);
  }, Error);
}

TEST(Contaminate, SameSeedSameData) {
  const auto t = load_model_bundle(kToy + "/target.model");
  const auto a = load_model_bundle(kToy + "/adversary.model");
  const TextScorer ts(t.model, t.spec, 2), as(a.model, t.spec, 2);
  Rng r1(9), r2(9);
  EXPECT_EQ(make_contaminated_dataset(ts, as, t.spec, 40, 100, r1),
            make_contaminated_dataset(ts, as, t.spec, 40, 100, r2));
  EXPECT_EQ(ts.method(), "eval_plus(d=2,candidate_union)");
}

TEST(Sweep, RowCountsAndDeterminism) {
  auto g = load_grid(kToy + "/small.grid");
  const auto first = run_experiment_grid(g);
  EXPECT_EQ(first.separation, 1.2);
  // gamma 0 and 90 are in-hypothesis for both cells (3 reps each); gamma 50 for neither
  ASSERT_EQ(first.rows.size(), 2u * 2u * 3u + 2u);
  std::size_t oob = 0;
  for (const auto& r : first.rows) {
    if (r.status == "out-of-hypothesis") {
      ++oob;
      EXPECT_EQ(r.gamma, 50.0);
      EXPECT_EQ(r.rep, -1);
    } else {
      EXPECT_EQ(r.status, "ok");
    }
  }
  EXPECT_EQ(oob, 2u);

  g.threads = 1;
  EXPECT_EQ(results_text(run_experiment_grid(g).rows), results_text(first.rows));
  g.seed += 1;
  EXPECT_NE(results_text(run_experiment_grid(g).rows), results_text(first.rows));
}

TEST(Sweep, PoolModeMatchesRequestedSizes) {
  const auto t = load_model_bundle(kToy + "/target.model");
  const auto a = load_model_bundle(kToy + "/adversary.model");
  const TextScorer ts(t.model, t.spec), as(a.model, t.spec);
  const std::string dir = ::testing::TempDir();
  Rng rng(3);
  write_scored(dir + "/pool_t.jsonl", make_contaminated_dataset(ts, as, t.spec, 0, 400, rng));
  write_scored(dir + "/pool_a.jsonl", make_contaminated_dataset(ts, as, t.spec, 100, 400, rng));
  write_scored(dir + "/pool_r.jsonl", make_contaminated_dataset(ts, as, t.spec, 0, 400, rng));
  const auto g = parse_grid(kv("gammas = 0, 90\nlbub = 10:90\nsample_counts = 100\nrepetitions = 2\n"
                               "target_pool = pool_t.jsonl\nadversary_pool = pool_a.jsonl\n"
                               "reference_pool = pool_r.jsonl\ntarget_name = target\nseparation = 1.3\n"),
                            dir);
  const auto out = run_experiment_grid(g);
  ASSERT_EQ(out.rows.size(), 4u);
  for (const auto& r : out.rows) EXPECT_EQ(r.status, "ok");

  auto big = g;
  big.sample_counts = {1000};
  EXPECT_THROW(run_experiment_grid(big), Error);
}
