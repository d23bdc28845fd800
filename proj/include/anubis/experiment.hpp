#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "anubis/contaminate.hpp"
#include "anubis/core_stats.hpp"
#include "anubis/kv_config.hpp"
#include "anubis/scored_io.hpp"
#include "anubis/tester.hpp"
#include "anubis/toy_model.hpp"

namespace anubis {

struct ExperimentGrid {
  std::string group = "default";
  std::vector<double> gammas;
  std::vector<std::pair<double, double>> lbub;
  std::vector<std::size_t> sample_counts;
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;

  // toy-model source
  std::string target_model;
  std::string adversary_model;
  std::string tokenizer;
  std::size_t depth = 0;
  EvalPlusMode eval_plus_mode = EvalPlusMode::candidate_union;

  // pre-scored file source
  std::string target_pool;
  std::string adversary_pool;
  std::string reference_pool;
  std::string target_name;

  std::optional<double> separation;  // nullopt: computed from the toy models
  double separation_min_mass = 1e-12;
  TestConfig config = [] {
    TestConfig c;
    c.strict = false;
    return c;
  }();
  std::size_t threads = 1;
  bool shared_reference = false;

  bool pool_mode() const { return !target_pool.empty(); }
};

namespace detail {

inline std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    const auto part = trim(s.substr(0, comma));
    if (!part.empty()) out.push_back(part);
    if (comma == std::string_view::npos) break;
    s = s.substr(comma + 1);
  }
  return out;
}

inline std::string fmt(double v) { return format_double(v); }

}  // namespace detail

inline ExperimentGrid parse_grid(const std::vector<KvEntry>& entries, const std::string& base_dir) {
  ExperimentGrid g;
  auto fail = [](const KvEntry& e, const std::string& what) -> void {
    throw Error("grid-format", "line " + std::to_string(e.line) + ": " + e.key + ": " + what);
  };
  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base_dir.empty() ? (std::filesystem::path(base_dir) / p).string() : v;
  };
  std::string config_path;
  for (const auto& e : entries) {
    const auto& k = e.key;
    if (k == "group") g.group = e.value;
    else if (k == "gammas") {
      for (auto part : detail::split_list(e.value)) {
        double v = 0;
        if (!detail::parse_double(part, v) || v < 0 || v > 100) fail(e, "bad percentage");
        g.gammas.push_back(v);
      }
    } else if (k == "lbub") {
      for (auto part : detail::split_list(e.value)) {
        const auto colon = part.find(':');
        double lb = 0, ub = 0;
        if (colon == std::string_view::npos || !detail::parse_double(detail::trim(part.substr(0, colon)), lb) ||
            !detail::parse_double(detail::trim(part.substr(colon + 1)), ub) || !(lb >= 0 && lb < ub && ub <= 100)) {
          fail(e, "expected lb:ub pairs with 0 <= lb < ub <= 100");
        }
        g.lbub.emplace_back(lb, ub);
      }
    } else if (k == "sample_counts") {
      for (auto part : detail::split_list(e.value)) {
        long long v = 0;
        if (!detail::parse_int(part, v) || v < 1) fail(e, "bad sample count");
        g.sample_counts.push_back(static_cast<std::size_t>(v));
      }
    } else if (k == "repetitions") {
      g.repetitions = static_cast<std::size_t>(kv_uint(e));
      if (g.repetitions < 1) fail(e, "must be >= 1");
    } else if (k == "seed") g.seed = kv_uint(e);
    else if (k == "target_model") g.target_model = path(e.value);
    else if (k == "adversary_model") g.adversary_model = path(e.value);
    else if (k == "tokenizer") g.tokenizer = path(e.value);
    else if (k == "depth") g.depth = static_cast<std::size_t>(kv_uint(e));
    else if (k == "eval_plus_mode") g.eval_plus_mode = parse_eval_plus_mode(e.value);
    else if (k == "target_pool") g.target_pool = path(e.value);
    else if (k == "adversary_pool") g.adversary_pool = path(e.value);
    else if (k == "reference_pool") g.reference_pool = path(e.value);
    else if (k == "target_name") g.target_name = e.value;
    else if (k == "separation") {
      if (e.value != "auto") {
        const double v = kv_double(e);
        if (!(v > 0 && v <= 2)) fail(e, "separation must lie in (0, 2]");
        g.separation = v;
      }
    } else if (k == "separation_min_mass") g.separation_min_mass = kv_double(e);
    else if (k == "config") config_path = path(e.value);
    else if (k == "threads") g.threads = std::max<std::size_t>(1, static_cast<std::size_t>(kv_uint(e)));
    else if (k == "shared_reference") g.shared_reference = kv_bool(e);
    else if (!apply_config_entry(g.config, e)) fail(e, "unknown key");
  }
  if (!config_path.empty()) {
    TestConfig base;
    base.strict = false;
    g.config = load_test_config(config_path, base);
    for (const auto& e : entries) apply_config_entry(g.config, e);  // inline keys win
  }
  if (g.gammas.empty() || g.lbub.empty() || g.sample_counts.empty()) {
    throw Error("grid-format", "gammas, lbub and sample_counts are required");
  }
  if (g.pool_mode()) {
    if (g.adversary_pool.empty() || g.reference_pool.empty() || g.target_name.empty()) {
      throw Error("grid-format", "pool mode needs adversary_pool, reference_pool and target_name");
    }
    if (!g.separation) throw Error("grid-format", "pool mode needs a numeric separation");
  } else if (g.target_model.empty() || g.adversary_model.empty()) {
    throw Error("grid-format", "need target_model and adversary_model (or the pool keys)");
  }
  return g;
}

inline ExperimentGrid load_grid(const std::string& file) {
  return parse_grid(load_kv(file), std::filesystem::path(file).parent_path().string());
}

/// ANUBIS_SEED, when set to an unsigned integer, replaces the grid seed.
inline void apply_seed_override(ExperimentGrid& g) {
  const char* env = std::getenv("ANUBIS_SEED");
  if (!env || !*env) return;
  long long v = 0;
  if (!detail::parse_int(env, v) || v < 0) throw Error("invalid-argument", "ANUBIS_SEED must be an unsigned integer");
  g.seed = static_cast<std::uint64_t>(v);
}

// ---------------------------------------------------------------------------
// Class labels
// ---------------------------------------------------------------------------

enum class RunClass { positive, negative, out_of_hypothesis };

inline const char* to_string(RunClass c) {
  switch (c) {
    case RunClass::positive: return "positive";
    case RunClass::negative: return "negative";
    default: return "none";
  }
}

/// gamma is the replaced percentage, so the target share is 100 - gamma.
inline RunClass classify(double gamma_pct, double lb_pct, double ub_pct) {
  const double target = 100.0 - gamma_pct;
  if (target >= ub_pct - 1e-9) return RunClass::positive;
  if (target <= lb_pct + 1e-9) return RunClass::negative;
  return RunClass::out_of_hypothesis;
}

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ResultRow {
  std::string group;
  double lb = 0, ub = 0;
  std::size_t n = 0;
  double gamma = 0;
  long rep = -1;  // -1 for the single out-of-hypothesis row of a cell
  RunClass cls = RunClass::out_of_hypothesis;
  std::string status;  // ok | out-of-hypothesis | error:<code>
  std::size_t ell = 0;
  std::string verdict;
  double score = 0, global_stat = 0, global_thresh = 0, max_local_ratio = 0;
  std::uint64_t seed = 0;

  auto key() const { return std::make_tuple(group, lb, ub, n, gamma, rep); }
};

inline constexpr const char* kResultsHeader =
    "group\tlb\tub\tn\tgamma\trep\ttarget_pct\tclass\tstatus\tell\tverdict\tscore\tglobal_stat\t"
    "global_thresh\tmax_local_ratio\tseed";

inline void write_results(std::ostream& out, const std::vector<ResultRow>& rows) {
  using detail::fmt;
  out << kResultsHeader << '\n';
  for (const auto& r : rows) {
    out << r.group << '\t' << fmt(r.lb) << '\t' << fmt(r.ub) << '\t' << r.n << '\t' << fmt(r.gamma)
        << '\t' << (r.rep < 0 ? std::string("-") : std::to_string(r.rep)) << '\t'
        << fmt(100.0 - r.gamma) << '\t' << to_string(r.cls) << '\t' << r.status << '\t';
    if (r.status == "ok") {
      out << r.ell << '\t' << r.verdict << '\t' << fmt(r.score) << '\t' << fmt(r.global_stat) << '\t'
          << fmt(r.global_thresh) << '\t' << fmt(r.max_local_ratio) << '\t' << r.seed << '\n';
    } else {
      out << "-\t-\t-\t-\t-\t-\t" << r.seed << '\n';
    }
  }
}

inline std::vector<ResultRow> read_results(std::istream& in) {
  std::vector<ResultRow> rows;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw Error("results-format", "line " + std::to_string(lineno) + ": " + what);
  };
  auto num = [&](const std::string& s) {
    double v = 0;
    if (!detail::parse_double(s, v)) fail("bad number '" + s + "'");
    return v;
  };
  auto uint = [&](const std::string& s) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || end != s.data() + s.size()) fail("bad integer '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kResultsHeader) fail("unexpected header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, '\t')) f.push_back(cell);
    if (f.size() != 16) fail("expected 16 columns");
    ResultRow r;
    r.group = f[0];
    r.lb = num(f[1]);
    r.ub = num(f[2]);
    r.n = static_cast<std::size_t>(uint(f[3]));
    r.gamma = num(f[4]);
    r.rep = f[5] == "-" ? -1 : static_cast<long>(uint(f[5]));
    if (f[7] == "positive") r.cls = RunClass::positive;
    else if (f[7] == "negative") r.cls = RunClass::negative;
    else if (f[7] == "none") r.cls = RunClass::out_of_hypothesis;
    else fail("bad class");
    r.status = f[8];
    if (r.status == "ok") {
      r.ell = static_cast<std::size_t>(uint(f[9]));
      r.verdict = f[10];
      r.score = num(f[11]);
      r.global_stat = num(f[12]);
      r.global_thresh = num(f[13]);
      r.max_local_ratio = num(f[14]);
    }
    r.seed = uint(f[15]);
    rows.push_back(std::move(r));
  }
  return rows;
}

struct AurocRow {
  std::string group;
  std::string lb, ub;  // "all" on pooled rows
  std::size_t n = 0;
  std::size_t positives = 0, negatives = 0;
  std::optional<double> auroc;  // nullopt when one class is missing
};

/// AUROC per (group, lb, ub, n) and pooled over all LB/UB cells of a
/// (group, n). Higher score means more evidence for rejection, so the value
/// is P(score of a negative-class run > score of a positive-class run).
inline std::vector<AurocRow> summarize_auroc(const std::vector<ResultRow>& rows) {
  using CellKey = std::tuple<std::string, double, double, std::size_t>;
  std::map<CellKey, std::pair<std::vector<double>, std::vector<double>>> cells;
  std::map<std::pair<std::string, std::size_t>, std::pair<std::vector<double>, std::vector<double>>> pooled;
  for (const auto& r : rows) {
    if (r.status != "ok" || r.cls == RunClass::out_of_hypothesis) continue;
    auto& c = cells[{r.group, r.lb, r.ub, r.n}];
    auto& p = pooled[{r.group, r.n}];
    if (r.cls == RunClass::positive) {
      c.first.push_back(r.score);
      p.first.push_back(r.score);
    } else {
      c.second.push_back(r.score);
      p.second.push_back(r.score);
    }
  }
  auto make = [](std::string group, std::string lb, std::string ub, std::size_t n,
                 const std::vector<double>& pos, const std::vector<double>& neg) {
    AurocRow a{std::move(group), std::move(lb), std::move(ub), n, pos.size(), neg.size(), std::nullopt};
    if (!pos.empty() && !neg.empty()) a.auroc = auroc(neg, pos);
    return a;
  };
  std::vector<AurocRow> out;
  for (const auto& [k, v] : cells) {
    out.push_back(make(std::get<0>(k), detail::fmt(std::get<1>(k)), detail::fmt(std::get<2>(k)),
                       std::get<3>(k), v.first, v.second));
  }
  for (const auto& [k, v] : pooled) out.push_back(make(k.first, "all", "all", k.second, v.first, v.second));
  return out;
}

inline void write_auroc(std::ostream& out, const std::vector<AurocRow>& rows) {
  out << "group\tlb\tub\tn\tpositives\tnegatives\tauroc\n";
  for (const auto& r : rows) {
    out << r.group << '\t' << r.lb << '\t' << r.ub << '\t' << r.n << '\t' << r.positives << '\t'
        << r.negatives << '\t' << (r.auroc ? detail::fmt(*r.auroc) : std::string("undefined")) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sources
// ---------------------------------------------------------------------------

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual Multiset<std::string> draw_s(std::size_t n, double gamma, Rng& rng) const = 0;
  virtual Multiset<std::string> draw_t(std::size_t n, Rng& rng) const = 0;
  virtual EvalOracle<std::string> eval() const = 0;
};

class ToySource : public SampleSource {
 public:
  explicit ToySource(const ExperimentGrid& g)
      : target_(load_model_bundle(g.target_model, g.tokenizer)),
        adversary_(load_model_bundle(g.adversary_model, g.tokenizer)) {
    if (target_.spec.serialize() != adversary_.spec.serialize()) {
      throw Error("model-mismatch", "target and adversary use different tokenizers");
    }
    t_scorer_ = std::make_unique<TextScorer>(target_.model, target_.spec, g.depth, g.eval_plus_mode);
    a_scorer_ = std::make_unique<TextScorer>(adversary_.model, target_.spec, g.depth, g.eval_plus_mode);
  }

  Multiset<std::string> draw_s(std::size_t n, double gamma, Rng& rng) const override {
    Multiset<std::string> m;
    for (auto& s : make_contaminated_dataset(*t_scorer_, *a_scorer_, target_.spec, gamma, n, rng)) {
      m.add(s.text);
    }
    return m;
  }

  Multiset<std::string> draw_t(std::size_t n, Rng& rng) const override {
    Multiset<std::string> m;
    for (std::size_t i = 0; i < n; ++i) m.add(sample_text(target_.model, target_.spec, rng).text);
    return m;
  }

  EvalOracle<std::string> eval() const override { return t_scorer_->oracle(); }

  /// l1 distance between the two text distributions.
  double separation(double min_mass) const {
    const auto len = std::max(target_.model.max_len(), adversary_.model.max_len());
    const auto a = text_pmf(target_.model, target_.spec, len, min_mass);
    const auto b = text_pmf(adversary_.model, target_.spec, len, min_mass);
    return std::min(l1_distance(a.pmf, b.pmf), 2.0);
  }

 private:
  ModelBundle target_;
  ModelBundle adversary_;
  std::unique_ptr<TextScorer> t_scorer_;
  std::unique_ptr<TextScorer> a_scorer_;
};

class PoolSource : public SampleSource {
 public:
  explicit PoolSource(const ExperimentGrid& g) {
    auto load = [&](const std::string& path, std::vector<std::string>& texts) {
      for (const auto& s : read_scored(path).samples) {
        texts.push_back(s.text);
        auto it = s.logprob.find(g.target_name);
        const double lp = (it == s.logprob.end() || !it->second) ? kNegInf : *it->second;
        logprob_.emplace(s.text, lp);
      }
    };
    load(g.target_pool, target_);
    load(g.adversary_pool, adversary_);
    load(g.reference_pool, reference_);
  }

  Multiset<std::string> draw_s(std::size_t n, double gamma, Rng& rng) const override {
    const std::size_t k = replaced_count(gamma, n);
    Multiset<std::string> m;
    for (auto i : subset(target_.size(), n - k, rng)) m.add(target_[i]);
    for (auto i : subset(adversary_.size(), k, rng)) m.add(adversary_[i]);
    return m;
  }

  Multiset<std::string> draw_t(std::size_t n, Rng& rng) const override {
    Multiset<std::string> m;
    for (auto i : subset(reference_.size(), n, rng)) m.add(reference_[i]);
    return m;
  }

  EvalOracle<std::string> eval() const override {
    EvalOracle<std::string> o;
    o.log_eval = [this](const std::string& x) {
      auto it = logprob_.find(x);
      return it == logprob_.end() ? kNegInf : it->second;
    };
    o.eval = [f = o.log_eval](const std::string& x) { return std::exp(f(x)); };
    return o;
  }

 private:
  static std::vector<std::size_t> subset(std::size_t size, std::size_t k, Rng& rng) {
    if (k > size) throw Error("insufficient-data", "pool has fewer samples than requested");
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, size - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    return idx;
  }

  std::vector<std::string> target_, adversary_, reference_;
  std::map<std::string, double> logprob_;
};

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct SweepOutput {
  std::vector<ResultRow> rows;
  double separation = 0.0;
};

inline std::string cell_key(const char* tag, const ExperimentGrid& g, std::size_t n, double gamma,
                            long rep, std::optional<std::pair<double, double>> lbub = std::nullopt) {
  std::string k = std::string(tag) + "/" + g.group + "/" + std::to_string(n) + "/" + detail::fmt(gamma) +
                  "/" + std::to_string(rep);
  if (lbub) k += "/" + detail::fmt(lbub->first) + ":" + detail::fmt(lbub->second);
  return k;
}

inline SweepOutput run_experiment_grid(const ExperimentGrid& g) {
  std::unique_ptr<SampleSource> source;
  SweepOutput out;
  if (g.pool_mode()) {
    source = std::make_unique<PoolSource>(g);
    out.separation = *g.separation;
  } else {
    auto toy = std::make_unique<ToySource>(g);
    out.separation = g.separation ? *g.separation : toy->separation(g.separation_min_mass);
    source = std::move(toy);
  }
  if (!(out.separation > 0.0)) throw Error("invalid-argument", "separation must be positive");
  const auto eval = source->eval();

  struct Job {
    std::size_t n;
    double gamma;
    long rep;
  };
  std::vector<Job> jobs;
  for (auto n : g.sample_counts) {
    for (auto gamma : g.gammas) {
      bool any = false;
      for (const auto& [lb, ub] : g.lbub) {
        if (classify(gamma, lb, ub) != RunClass::out_of_hypothesis) {
          any = true;
          continue;
        }
        ResultRow r;
        r.group = g.group;
        r.lb = lb;
        r.ub = ub;
        r.n = n;
        r.gamma = gamma;
        r.status = "out-of-hypothesis";
        out.rows.push_back(r);
      }
      if (!any) continue;
      for (std::size_t rep = 0; rep < g.repetitions; ++rep) jobs.push_back({n, gamma, static_cast<long>(rep)});
    }
  }

  std::mutex sink;
  std::exception_ptr failure;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        const auto& job = jobs[j];
        Rng s_rng(derive_seed(g.seed, cell_key("S", g, job.n, job.gamma, job.rep)));
        const auto s = source->draw_s(job.n, job.gamma, s_rng);
        std::vector<ResultRow> local;
        for (const auto& [lb, ub] : g.lbub) {
          const auto cls = classify(job.gamma, lb, ub);
          if (cls == RunClass::out_of_hypothesis) continue;
          ResultRow r;
          r.group = g.group;
          r.lb = lb;
          r.ub = ub;
          r.n = job.n;
          r.gamma = job.gamma;
          r.rep = job.rep;
          r.cls = cls;
          r.seed = derive_seed(g.seed, g.shared_reference
                                           ? cell_key("T", g, job.n, job.gamma, job.rep)
                                           : cell_key("T", g, job.n, job.gamma, job.rep, std::make_pair(lb, ub)));
          try {
            Rng t_rng(r.seed);
            const auto t = source->draw_t(job.n, t_rng);
            TestConfig cfg = g.config;
            const auto eps = lbub_to_epsilons(lb, ub, out.separation);
            cfg.eps1 = eps.eps1;
            cfg.eps2 = eps.eps2;
            const auto rep = anubis_test(s, t, eval, cfg);
            r.status = "ok";
            r.ell = rep.ell;
            r.verdict = to_string(rep.verdict);
            r.score = rep.score;
            r.global_stat = rep.global_stat;
            r.global_thresh = rep.global_thresh;
            r.max_local_ratio = rep.max_local_ratio();
          } catch (const Error& e) {
            r.status = "error:" + e.code();
          }
          local.push_back(std::move(r));
        }
        std::lock_guard lock(sink);
        for (auto& r : local) out.rows.push_back(std::move(r));
      } catch (...) {
        std::lock_guard lock(sink);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const std::size_t nthreads = std::min<std::size_t>(g.threads, std::max<std::size_t>(jobs.size(), 1));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::sort(out.rows.begin(), out.rows.end(),
            [](const ResultRow& a, const ResultRow& b) { return a.key() < b.key(); });
  return out;
}

}  // namespace anubis
