#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "anubis/anubis.hpp"

using namespace anubis;
using ojson = nlohmann::ordered_json;

namespace {

// Writes to a file, or stdout for "" and "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
      if (!*file_) throw Error("io", "cannot write " + path);
    }
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

EvalOracle<std::string> logprob_oracle(const std::vector<ScoredSample>& a,
                                       const std::vector<ScoredSample>& b,
                                       const std::string& target) {
  auto table = std::make_shared<std::map<std::string, double>>();
  bool seen = false;
  for (const auto* set : {&a, &b}) {
    for (const auto& s : *set) {
      auto it = s.logprob.find(target);
      seen = seen || it != s.logprob.end();
      const double lp = (it == s.logprob.end() || !it->second) ? kNegInf : *it->second;
      table->emplace(s.text, lp);
    }
  }
  if (!seen) throw Error("model-mismatch", "no sample carries a logprob for model " + target);
  EvalOracle<std::string> o;
  o.log_eval = [table](const std::string& x) {
    auto it = table->find(x);
    return it == table->end() ? kNegInf : it->second;
  };
  o.eval = [f = o.log_eval](const std::string& x) { return std::exp(f(x)); };
  return o;
}

Multiset<std::string> texts_of(const std::vector<ScoredSample>& v) {
  Multiset<std::string> m;
  for (const auto& s : v) m.add(s.text);
  return m;
}

ojson report_json(const TestReport& r) {
  ojson j;
  j["verdict"] = to_string(r.verdict);
  j["first_failure"] = r.first_failure;
  j["score"] = r.score;
  j["ell"] = r.ell;
  j["ell_capped"] = r.ell_capped;
  j["eps1"] = r.eps1;
  j["eps2"] = r.eps2;
  j["delta1"] = r.delta1;
  j["delta2"] = r.delta2;
  j["global"] = {{"stat", r.global_stat}, {"thresh", r.global_thresh}, {"reject", r.global_reject}};
  ojson buckets = ojson::array();
  for (const auto& b : r.per_bucket) {
    buckets.push_back({{"bucket", b.bucket},   {"size_s", b.size_s},       {"size_t", b.size_t_},
                       {"ref_mass", b.ref_mass}, {"z", b.z},                 {"thresh", b.thresh},
                       {"thresh_l1", b.thresh_l1}, {"scale", b.scale},       {"reject", b.reject}});
  }
  j["per_bucket"] = buckets;
  j["leftover"] = {{"s", r.leftover_s}, {"t", r.leftover_t}};
  j["zero_mass"] = {{"s", r.zero_mass_s}, {"t", r.zero_mass_t}};
  j["sizes"] = {{"s", r.size_s}, {"t", r.size_t_}};
  j["t_l2"] = r.t_l2;
  ojson v = ojson::array();
  for (const auto& x : r.violations) v.push_back({{"code", x.code}, {"lhs", x.lhs}, {"rhs", x.rhs}});
  j["violations"] = v;
  j["seed"] = r.seed;
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sample attribution with bucketed identity tests"};
  app.require_subcommand(1);

  // score ------------------------------------------------------------------
  auto* score = app.add_subcommand("score", "Score texts under a toy model, or pass a scored file through");
  std::string sc_model, sc_tok, sc_in, sc_out, sc_mode = "candidate_union";
  std::size_t sc_depth = 0, sc_sample = 0;
  std::uint64_t sc_seed = 0;
  score->add_option("--model", sc_model, "Toy model file");
  score->add_option("--tokenizer", sc_tok, "Tokenizer file (default: the one named in the model)");
  score->add_option("--depth", sc_depth, "0 = exact enumeration, d >= 1 = EVAL+ with depth d");
  score->add_option("--mode", sc_mode, "EVAL+ mode: candidate_union | conditioned | as_written");
  score->add_option("--in", sc_in, "Scored-sample file to (re)score");
  score->add_option("--sample", sc_sample, "Draw N texts from the model instead of reading --in");
  score->add_option("--seed", sc_seed, "Seed for --sample");
  score->add_option("--out", sc_out, "Output file (default stdout)");

  // bucketize --------------------------------------------------------------
  auto* bucket = app.add_subcommand("bucketize", "Show the bucket partition of a scored file");
  std::string bk_in, bk_target, bk_out;
  std::size_t bk_ell = 0, bk_ell_max = kDefaultEllMax;
  double bk_tau = 0.0;
  bucket->add_option("--in", bk_in, "Scored-sample file")->required();
  bucket->add_option("--target", bk_target, "Model name whose logprobs define the buckets")->required();
  auto* ell_opt = bucket->add_option("--ell", bk_ell, "Number of buckets");
  auto* tau_opt = bucket->add_option("--tau", bk_tau, "Leftover fraction for the empirical bucket count");
  ell_opt->excludes(tau_opt);
  bucket->add_option("--ell-max", bk_ell_max, "Cap for --tau");
  bucket->add_option("--out", bk_out, "Output file (default stdout)");

  // test -------------------------------------------------------------------
  auto* test = app.add_subcommand("test", "Run the attribution test of S against a reference sample T");
  std::string ts_in, ts_ref, ts_target, ts_config, ts_out;
  std::optional<double> ts_eps1, ts_eps2, ts_delta;
  std::uint64_t ts_seed = 0;
  test->add_option("--in", ts_in, "Scored file with the samples S")->required();
  test->add_option("--ref", ts_ref, "Scored file with reference samples T from the target")->required();
  test->add_option("--target", ts_target, "Target model name (logprob key)")->required();
  test->add_option("--eps1", ts_eps1, "Closeness radius");
  test->add_option("--eps2", ts_eps2, "Farness radius");
  test->add_option("--delta", ts_delta, "Failure probability budget");
  test->add_option("--config", ts_config, "Key-value config file");
  test->add_option("--seed", ts_seed, "Seed recorded in the report");
  test->add_option("--out", ts_out, "Report file (default stdout)");

  // contaminate ------------------------------------------------------------
  auto* cont = app.add_subcommand("contaminate", "Build a contaminated sample set from two toy models");
  std::string ct_target, ct_adv, ct_tok, ct_out, ct_mode = "candidate_union";
  double ct_gamma = 0.0;
  std::size_t ct_n = 1000, ct_depth = 0;
  std::uint64_t ct_seed = 0;
  cont->add_option("--target-model", ct_target, "Target toy model")->required();
  cont->add_option("--adversary-model", ct_adv, "Adversary toy model")->required();
  cont->add_option("--tokenizer", ct_tok, "Tokenizer override");
  cont->add_option("--gamma", ct_gamma, "Replaced percentage")->required()->check(CLI::Range(0.0, 100.0));
  cont->add_option("--n", ct_n, "Number of samples");
  cont->add_option("--seed", ct_seed, "Seed");
  cont->add_option("--depth", ct_depth, "0 = exact scores, d >= 1 = EVAL+");
  cont->add_option("--mode", ct_mode, "EVAL+ mode");
  cont->add_option("--out", ct_out, "Output file (default stdout)");

  // sweep ------------------------------------------------------------------
  auto* sweep = app.add_subcommand("sweep", "Run an experiment grid");
  std::string sw_grid, sw_out, sw_auroc;
  std::size_t sw_threads = 0;
  sweep->add_option("--grid-file", sw_grid, "Grid file")->required();
  sweep->add_option("--out", sw_out, "Results TSV (default stdout)");
  sweep->add_option("--auroc-out", sw_auroc, "Also write the AUROC summary here");
  sweep->add_option("--threads", sw_threads, "Override the grid's thread count");

  // auroc ------------------------------------------------------------------
  auto* au = app.add_subcommand("auroc", "Summarize a results TSV into AUROC per cell");
  std::string au_in, au_out;
  au->add_option("--in", au_in, "Results TSV")->required();
  au->add_option("--out", au_out, "AUROC TSV (default stdout)");

  // plan -------------------------------------------------------------------
  auto* plan = app.add_subcommand("plan", "Print sample sizes n1, n2 for a configuration");
  std::optional<double> pl_eps1, pl_eps2, pl_delta;
  std::uint64_t pl_domain = 0;
  std::size_t pl_ell = 0;
  std::string pl_config;
  plan->add_option("--eps1", pl_eps1, "Closeness radius");
  plan->add_option("--eps2", pl_eps2, "Farness radius");
  plan->add_option("--delta", pl_delta, "Failure probability budget");
  plan->add_option("--domain", pl_domain, "Domain size")->required();
  plan->add_option("--config", pl_config, "Key-value config file");
  plan->add_option("--ell", pl_ell, "Bucket count (default: theoretical)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*score) {
      std::vector<ScoredSample> samples;
      std::optional<nlohmann::json> header;
      if (sc_model.empty()) {
        if (sc_in.empty()) throw Error("invalid-argument", "score needs --model or --in");
        auto file = read_scored(sc_in);
        for (const auto& w : file.warnings) std::cerr << "warning: " << w << "\n";
        Output out(sc_out);
        write_scored(out.stream(), file.samples, file.header);
        return 0;
      }
      const auto bundle = load_model_bundle(sc_model, sc_tok);
      const TextScorer scorer(bundle.model, bundle.spec, sc_depth, parse_eval_plus_mode(sc_mode));
      if (sc_sample > 0) {
        Rng rng(derive_seed(sc_seed, "score/sample"));
        for (std::size_t i = 0; i < sc_sample; ++i) {
          auto draw = sample_text(bundle.model, bundle.spec, rng);
          ScoredSample s;
          s.id = "s" + std::to_string(i);
          s.text = draw.text;
          s.tokens = draw.tokens;
          if (!s.tokens.empty() && s.tokens.back() == bundle.spec.eos()) s.tokens.pop_back();
          s.provenance = bundle.model.name();
          samples.push_back(std::move(s));
        }
      } else if (!sc_in.empty()) {
        auto file = read_scored(sc_in);
        for (const auto& w : file.warnings) std::cerr << "warning: " << w << "\n";
        samples = std::move(file.samples);
        header = file.header;
      } else {
        throw Error("invalid-argument", "score needs --in or --sample");
      }
      for (auto& s : samples) {
        if (s.tokens.empty() && !s.text.empty()) s.tokens = bundle.spec.encode(s.text);
        s.logprob[bundle.model.name()] = scorer.log_prob(s.text);
      }
      nlohmann::json h = header.value_or(nlohmann::json::object());
      if (!h.is_object()) h = nlohmann::json::object();
      h["format"] = "anubis-scored";
      h["version"] = 1;
      h["scoring"][bundle.model.name()] = {{"method", sc_depth == 0 ? "exact" : "eval_plus"},
                                           {"depth", sc_depth},
                                           {"mode", sc_depth == 0 ? nlohmann::json(nullptr) : nlohmann::json(sc_mode)},
                                           {"tokenizer", bundle.spec.name()}};
      Output out(sc_out);
      write_scored(out.stream(), samples, h);
      return 0;
    }

    if (*bucket) {
      const auto file = read_scored(bk_in);
      const auto m = texts_of(file.samples);
      const auto eval = logprob_oracle(file.samples, {}, bk_target);
      std::size_t ell = bk_ell;
      bool capped = false;
      if (*tau_opt) {
        const auto choice = empirical_ell(m, eval, bk_tau, bk_ell_max);
        ell = choice.ell;
        capped = choice.capped;
      }
      if (ell == 0) throw Error("invalid-argument", "bucketize needs --ell or --tau");
      const auto part = bucketize(m, eval, ell);
      Output out(bk_out);
      auto& os = out.stream();
      os << "# ell=" << ell << (capped ? " (capped)" : "") << " samples=" << part.source_size
         << " zero_mass=" << part.zero_mass << "\n";
      os << "bucket\tlow\thigh\tcount\tdistinct\tfraction\n";
      for (std::size_t j = 0; j <= ell; ++j) {
        const auto& b = part.buckets[j];
        const double lo = j == 0 ? 0.0 : std::ldexp(1.0, -static_cast<int>(j));
        const double hi = std::ldexp(1.0, j == 0 ? -static_cast<int>(ell) : 1 - static_cast<int>(j));
        const double frac = part.source_size ? static_cast<double>(b.total()) / part.source_size : 0.0;
        os << j << '\t' << detail::format_double(lo) << '\t' << detail::format_double(hi) << '\t'
           << b.total() << '\t' << b.distinct() << '\t' << detail::format_double(frac) << '\n';
      }
      return 0;
    }

    if (*test) {
      TestConfig cfg;
      if (!ts_config.empty()) cfg = load_test_config(ts_config);
      if (ts_eps1) cfg.eps1 = *ts_eps1;
      if (ts_eps2) cfg.eps2 = *ts_eps2;
      if (ts_delta) cfg.delta = *ts_delta;
      const auto s = read_scored(ts_in);
      const auto t = read_scored(ts_ref);
      for (const auto& w : s.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& w : t.warnings) std::cerr << "warning: " << w << "\n";
      const auto eval = logprob_oracle(s.samples, t.samples, ts_target);
      auto rep = anubis_test(texts_of(s.samples), texts_of(t.samples), eval, cfg);
      rep.seed = ts_seed;
      Output out(ts_out);
      out.stream() << report_json(rep).dump(2) << "\n";
      return 0;
    }

    if (*cont) {
      const auto target = load_model_bundle(ct_target, ct_tok);
      const auto adversary = load_model_bundle(ct_adv, ct_tok);
      if (target.spec.serialize() != adversary.spec.serialize()) {
        throw Error("model-mismatch", "target and adversary use different tokenizers");
      }
      const auto mode = parse_eval_plus_mode(ct_mode);
      const TextScorer ts(target.model, target.spec, ct_depth, mode);
      const TextScorer as(adversary.model, target.spec, ct_depth, mode);
      Rng rng(derive_seed(ct_seed, "contaminate"));
      const auto samples = make_contaminated_dataset(ts, as, target.spec, ct_gamma, ct_n, rng);
      nlohmann::json h = {{"format", "anubis-scored"},
                          {"version", 1},
                          {"gamma", ct_gamma},
                          {"seed", ct_seed},
                          {"target", target.model.name()},
                          {"adversary", adversary.model.name()},
                          {"method", ts.method()}};
      Output out(ct_out);
      write_scored(out.stream(), samples, h);
      return 0;
    }

    if (*sweep) {
      auto grid = load_grid(sw_grid);
      apply_seed_override(grid);
      if (sw_threads > 0) grid.threads = sw_threads;
      const auto result = run_experiment_grid(grid);
      {
        Output out(sw_out);
        write_results(out.stream(), result.rows);
      }
      if (!sw_auroc.empty()) {
        Output out(sw_auroc);
        write_auroc(out.stream(), summarize_auroc(result.rows));
      }
      std::cerr << "separation " << detail::format_double(result.separation) << ", "
                << result.rows.size() << " rows\n";
      return 0;
    }

    if (*au) {
      std::ifstream in(au_in, std::ios::binary);
      if (!in) throw Error("io", "cannot open " + au_in);
      const auto rows = read_results(in);
      Output out(au_out);
      write_auroc(out.stream(), summarize_auroc(rows));
      return 0;
    }

    if (*plan) {
      TestConfig cfg;
      if (!pl_config.empty()) cfg = load_test_config(pl_config);
      if (pl_eps1) cfg.eps1 = *pl_eps1;
      if (pl_eps2) cfg.eps2 = *pl_eps2;
      if (pl_delta) cfg.delta = *pl_delta;
      check_config_ranges(cfg);
      const std::size_t ell = pl_ell > 0 ? pl_ell : theoretical_ell(pl_domain, cfg.c1, cfg.eps2);
      const auto violations = validate_config(cfg, ell);
      for (const auto& v : violations) {
        std::cerr << "violation " << v.code << ": " << detail::format_double(v.lhs) << " > "
                  << detail::format_double(v.rhs) << "\n";
      }
      const auto p = plan_sample_sizes(cfg, ell, pl_domain);
      std::cout << "ell\t" << ell << "\neta\t" << detail::format_double(p.eta) << "\nn1\t" << p.n1
                << "\nn2\t" << p.n2 << "\nsamples\t" << p.total() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
