#pragma once

// Holdout hyperparameter selection, multi-trial out-of-sample evaluation and
// percentile aggregation for the newsvendor and portfolio case studies.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "bandro/band_kde.hpp"
#include "bandro/band_sr.hpp"
#include "bandro/core.hpp"
#include "bandro/dro.hpp"
#include "bandro/oracle.hpp"
#include "bandro/problems.hpp"
#include "json.hpp"

namespace bandro::experiments {

using nlohmann::json;

enum class ProblemKind { Newsvendor, Portfolio };
enum class BandChoice { ShapeRestricted, Kde };

inline const char* to_string(ProblemKind k) { return k == ProblemKind::Newsvendor ? "newsvendor" : "portfolio"; }
inline const char* to_string(BandChoice b) { return b == BandChoice::ShapeRestricted ? "sr" : "kde"; }

inline ProblemKind parse_problem(std::string_view s) {
  if (s == "newsvendor") return ProblemKind::Newsvendor;
  if (s == "portfolio") return ProblemKind::Portfolio;
  throw InvalidParameter("unknown problem '" + std::string(s) + "'");
}

inline BandChoice parse_band(std::string_view s) {
  if (s == "sr") return BandChoice::ShapeRestricted;
  if (s == "kde") return BandChoice::Kde;
  throw InvalidParameter("unknown band kind '" + std::string(s) + "' (sr or kde)");
}

/// Family name plus named parameters; missing parameters take the family defaults.
struct DensitySpec {
  problems::Family family = problems::Family::TruncatedNormal;
  std::map<std::string, double> params;
};

inline problems::TrueDensity make_density(const DensitySpec& d) {
  auto get = [&](const char* key, double fallback) {
    const auto it = d.params.find(key);
    return it == d.params.end() ? fallback : it->second;
  };
  using problems::TrueDensity;
  switch (d.family) {
    case problems::Family::TruncatedNormal:
      return TrueDensity::truncated_normal(get("mean", 100), get("sd", 50), get("a", 0), get("b", 250));
    case problems::Family::ScaledBeta:
      return TrueDensity::scaled_beta(get("alpha", 5), get("beta", 2), get("a", 0), get("b", 250));
    case problems::Family::TruncatedExponential:
      return TrueDensity::truncated_exponential(get("mean", 100), get("a", 0), get("b", 250));
    case problems::Family::FactorNormal:
      return TrueDensity::factor_normal(static_cast<std::size_t>(get("n", 10)), get("factor_sd", 0.02),
                                        get("mean_step", 0.03), get("sd_step", 0.025));
  }
  throw InvalidParameter("unknown density family");
}

struct ExperimentConfig {
  std::string name = "experiment";
  ProblemKind problem = ProblemKind::Newsvendor;
  problems::NewsvendorSpec newsvendor;
  problems::PortfolioSpec portfolio;
  DensitySpec density;
  BandChoice band = BandChoice::ShapeRestricted;
  kde::KernelName kernel = kde::KernelName::Boxcar;
  std::vector<std::size_t> sizes{10, 20, 40, 80};
  std::size_t trials = 100;
  std::size_t n_large = 100000;
  /// SR: (c, alpha); KDE: (c, delta).
  Vec grid1{0.5, 0.75, 1.0, 1.25, 1.5};
  Vec grid2{0.75, 0.8, 0.85, 0.95};
  double train_fraction = 0.7;
  std::size_t mc_samples = 100000;  // SR coverage constants
  std::size_t table_points = 2001;  // SR surrogate used inside SGD
  dro::SgdConfig sgd;
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(!sizes.empty(), "config: sizes must be non-empty");
    for (std::size_t n : sizes) detail::require(n >= 10, "config: every sample size must be >= 10");
    detail::require(trials >= 1, "config: trials must be >= 1");
    detail::require(n_large >= 1, "config: n_large must be >= 1");
    detail::require(!grid1.empty() && !grid2.empty(), "config: hyperparameter grids must be non-empty");
    detail::require(train_fraction > 0.0 && train_fraction < 1.0, "config: train fraction must lie in (0, 1)");
    detail::require(sgd.batch >= 1 && sgd.iters >= 1 && sgd.eta > 0.0, "config: invalid sgd settings");
    const bool multivariate = density.family == problems::Family::FactorNormal;
    detail::require(!(band == BandChoice::ShapeRestricted && multivariate),
                    "config: shape-restricted bands need a univariate density");
    detail::require((problem == ProblemKind::Portfolio) == multivariate,
                    "config: newsvendor needs a univariate demand law, portfolio the factor model");
  }
};

/// Case-study defaults: newsvendor with SR bands, or portfolio with boxcar KDE bands.
inline ExperimentConfig default_config(ProblemKind kind) {
  ExperimentConfig c;
  c.problem = kind;
  if (kind == ProblemKind::Newsvendor) {
    c.name = "newsvendor";
    c.sgd.eta = 2.0;
    c.sgd.lambda_step_scale = 50.0;
    c.sgd.iters = 4000;
    return c;
  }
  c.name = "portfolio";
  c.density.family = problems::Family::FactorNormal;
  c.band = BandChoice::Kde;
  c.sizes = {30, 60, 120, 240, 480, 960};
  c.grid1 = {0.02, 0.04, 0.06, 0.08, 0.1};
  c.grid2 = {0.02, 0.04, 0.06, 0.08, 0.1};
  c.sgd.eta = 0.05;
  c.sgd.lambda_step_scale = 1.0;
  c.sgd.iters = 3000;
  c.sgd.proposal = dro::ProposalKind::KdeMixture;
  return c;
}

/// Desk scale: 20 trials and 20000 evaluation draws.
inline void apply_desk(ExperimentConfig& c) {
  c.trials = 20;
  c.n_large = 20000;
}

// ---------------------------------------------------------------------------
// JSON

namespace impl {

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [k, v] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* s) { return k == s; }) == known.end())
      throw InvalidParameter(std::string("config: unknown key '") + k + "' in " + where);
  }
}

}  // namespace impl

/// Starts from the defaults of the named problem and overrides the keys present.
inline ExperimentConfig config_from_json(const json& j) {
  try {
    impl::reject_unknown(j, {"name", "problem", "density", "band", "sizes", "trials", "n_large", "train_fraction", "sgd", "seed"},
                         "config");
    const json pj = j.value("problem", json::object());
    ExperimentConfig c = default_config(parse_problem(pj.value("kind", std::string("newsvendor"))));
    impl::take(j, "name", c.name);
    if (c.problem == ProblemKind::Newsvendor) {
      impl::reject_unknown(pj, {"kind", "c_s", "c_h", "b"}, "problem");
      impl::take(pj, "c_s", c.newsvendor.c_s);
      impl::take(pj, "c_h", c.newsvendor.c_h);
      impl::take(pj, "b", c.newsvendor.b);
    } else {
      impl::reject_unknown(pj, {"kind", "n", "eps", "gamma"}, "problem");
      impl::take(pj, "n", c.portfolio.n);
      impl::take(pj, "eps", c.portfolio.eps);
      impl::take(pj, "gamma", c.portfolio.gamma);
    }
    if (j.contains("density")) {
      const json& dj = j.at("density");
      c.density.family = problems::parse_family(dj.value("family", std::string(problems::to_string(c.density.family))));
      for (const auto& [k, v] : dj.items())
        if (k != "family") c.density.params[k] = v.get<double>();
    }
    if (j.contains("band")) {
      const json& bj = j.at("band");
      impl::reject_unknown(bj, {"kind", "kernel", "c", "alpha", "delta", "mc_samples", "table_points"}, "band");
      const BandChoice kind = parse_band(bj.value("kind", std::string(to_string(c.band))));
      if (kind != c.band) {
        c.band = kind;
        if (kind == BandChoice::Kde) {
          c.grid1 = {0.02, 0.04, 0.06, 0.08, 0.1};
          c.grid2 = {0.02, 0.04, 0.06, 0.08, 0.1};
        } else {
          c.grid1 = {0.5, 0.75, 1.0, 1.25, 1.5};
          c.grid2 = {0.75, 0.8, 0.85, 0.95};
        }
      }
      if (bj.contains("kernel")) c.kernel = kde::parse_kernel(bj.at("kernel").get<std::string>());
      impl::take(bj, "c", c.grid1);
      impl::take(bj, c.band == BandChoice::Kde ? "delta" : "alpha", c.grid2);
      impl::take(bj, "mc_samples", c.mc_samples);
      impl::take(bj, "table_points", c.table_points);
    }
    impl::take(j, "sizes", c.sizes);
    impl::take(j, "trials", c.trials);
    impl::take(j, "n_large", c.n_large);
    impl::take(j, "train_fraction", c.train_fraction);
    impl::take(j, "seed", c.seed);
    if (j.contains("sgd")) {
      const json& sj = j.at("sgd");
      impl::reject_unknown(sj, {"batch", "eta", "iters", "lambda_step_scale", "proposal", "mixture_weight"}, "sgd");
      impl::take(sj, "batch", c.sgd.batch);
      impl::take(sj, "eta", c.sgd.eta);
      impl::take(sj, "iters", c.sgd.iters);
      impl::take(sj, "lambda_step_scale", c.sgd.lambda_step_scale);
      impl::take(sj, "mixture_weight", c.sgd.mixture_weight);
      if (sj.contains("proposal")) c.sgd.proposal = dro::parse_proposal(sj.at("proposal").get<std::string>());
    }
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw InvalidParameter(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidParameter("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidParameter("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

inline json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  if (c.problem == ProblemKind::Newsvendor)
    j["problem"] = {{"kind", "newsvendor"}, {"c_s", c.newsvendor.c_s}, {"c_h", c.newsvendor.c_h}, {"b", c.newsvendor.b}};
  else
    j["problem"] = {{"kind", "portfolio"}, {"n", c.portfolio.n}, {"eps", c.portfolio.eps}, {"gamma", c.portfolio.gamma}};
  json dj = {{"family", problems::to_string(c.density.family)}};
  for (const auto& [k, v] : c.density.params) dj[k] = v;
  j["density"] = dj;
  json bj = {{"kind", to_string(c.band)}, {"c", c.grid1}};
  if (c.band == BandChoice::Kde) {
    bj["kernel"] = kde::to_string(c.kernel);
    bj["delta"] = c.grid2;
  } else {
    bj["alpha"] = c.grid2;
    bj["mc_samples"] = c.mc_samples;
    bj["table_points"] = c.table_points;
  }
  j["band"] = bj;
  j["sizes"] = c.sizes;
  j["trials"] = c.trials;
  j["n_large"] = c.n_large;
  j["train_fraction"] = c.train_fraction;
  j["sgd"] = {{"batch", c.sgd.batch},
              {"eta", c.sgd.eta},
              {"iters", c.sgd.iters},
              {"lambda_step_scale", c.sgd.lambda_step_scale},
              {"proposal", c.sgd.proposal == dro::ProposalKind::Uniform ? "uniform" : "kde-mixture"},
              {"mixture_weight", c.sgd.mixture_weight}};
  j["seed"] = c.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Band builders

/// Coverage constants shared across trials. Values depend only on
/// (seed, N, K, alpha), so the cache never changes results.
class CBoundsCache {
 public:
  CBoundsCache(std::uint64_t seed, std::size_t samples) : seed_(seed), samples_(samples) {}

  sr::CBounds get(std::size_t n, std::size_t k, double alpha) {
    const auto key = std::make_tuple(n, k, alpha);
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    const std::string label = "cbounds " + std::to_string(n) + " " + std::to_string(k) + " " + format_double(alpha);
    Rng rng(seed_, detail::splitmix64(detail::fnv1a(label)));
    const sr::CBounds cb = sr::estimate_c_bounds(n, k, alpha, samples_, rng);
    std::lock_guard lock(mu_);
    return cache_.emplace(key, cb).first->second;
  }

 private:
  std::uint64_t seed_;
  std::size_t samples_;
  std::mutex mu_;
  std::map<std::tuple<std::size_t, std::size_t, double>, sr::CBounds> cache_;
};

/// Band on a training set for one grid cell (p1, p2).
using BandBuilder = std::function<DensityBand(const SampleSet& train, double p1, double p2, Rng& rng)>;
using StartPoint = std::function<Vec(const SampleSet& train)>;

/// Everything a trial needs, derived once from the config.
struct TrialSetup {
  ProblemSpec problem;
  std::shared_ptr<const problems::TrueDensity> density;
  BandBuilder sgd_band;    // band used inside the solver
  BandBuilder exact_band;  // band for oracle values (same as sgd_band for KDE)
  StartPoint start;
  dro::SgdConfig sgd;
};

/// Empirical critical-ratio quantile of the data (the SAA order quantity).
inline Vec newsvendor_start(const problems::NewsvendorSpec& s, const SampleSet& train) {
  Vec v = train.column(0);
  std::sort(v.begin(), v.end());
  const double r = problems::newsvendor_critical_ratio(s);
  const std::size_t idx = std::min(v.size() - 1, static_cast<std::size_t>(std::ceil(r * static_cast<double>(v.size()))) - 1);
  return {std::clamp(v[idx], 0.0, s.b)};
}

inline TrialSetup make_setup(const ExperimentConfig& cfg) {
  cfg.validate();
  TrialSetup st;
  st.sgd = cfg.sgd;
  auto dens = std::make_shared<const problems::TrueDensity>(make_density(cfg.density));
  st.density = dens;
  if (cfg.problem == ProblemKind::Newsvendor) {
    st.problem = problems::make_newsvendor(cfg.newsvendor);
    const auto spec = cfg.newsvendor;
    st.start = [spec](const SampleSet& train) { return newsvendor_start(spec, train); };
  } else {
    detail::require(cfg.portfolio.n == dens->dim(), "config: portfolio size differs from the return dimension");
    st.problem = problems::make_portfolio(cfg.portfolio);
    const std::size_t n = cfg.portfolio.n;
    st.start = [n](const SampleSet&) {
      Vec x(n + 1, 1.0 / static_cast<double>(n));
      x[n] = 0.0;
      return x;
    };
  }
  if (cfg.band == BandChoice::ShapeRestricted) {
    auto cache = std::make_shared<CBoundsCache>(cfg.seed, cfg.mc_samples);
    const double a = dens->support().lower()[0], b = dens->support().upper()[0];
    const double mode = dens->mode(), cap = dens->cap();
    const std::size_t mc = cfg.mc_samples;
    st.exact_band = [=](const SampleSet& train, double c, double alpha, Rng&) {
      const std::size_t k = sr::group_size(train.size(), c);
      const sr::SrParams p{a, b, mode, cap, alpha, k, mc};
      return sr::build_sr_band(train, p, cache->get(train.size(), k, alpha));
    };
    const std::size_t points = cfg.table_points;
    st.sgd_band = [exact = st.exact_band, points](const SampleSet& train, double c, double alpha, Rng& rng) {
      return sr::tabulate_sr_band(exact(train, c, alpha, rng), points);
    };
  } else {
    const kde::KernelName kernel = cfg.kernel;
    st.exact_band = [kernel](const SampleSet& train, double c, double delta, Rng&) {
      kde::KdeParams p;
      p.kernel = kernel;
      p.h = kde::grid_bandwidth(c, train.size(), train.dim());
      p.delta = delta;
      return kde::build_kde_band(train, p);
    };
    st.sgd_band = st.exact_band;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Holdout selection

struct CellScore {
  double p1 = 0.0, p2 = 0.0;
  double test_cost = 0.0;
  bool skipped = false;
  std::string error;
};

struct Selection {
  double p1 = 0.0, p2 = 0.0;
  Vec x;  // solution on the training split for the chosen cell
  double score = 0.0;
  std::vector<CellScore> cells;
};

/// Seeded permutation split: the first round(f N) indices train, the rest test.
inline std::pair<SampleSet, SampleSet> holdout_split(const SampleSet& data, double train_fraction, Rng& rng) {
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
  detail::require(n_train >= 2 && n_train < data.size(), "holdout: split leaves an empty part");
  const std::span<const std::size_t> idx(perm);
  return {data.subset(idx.first(n_train)), data.subset(idx.subspan(n_train))};
}

inline dro::SaddlePoint solve_on(const TrialSetup& st, const DensityBand& band, const SampleSet& train, Rng& rng) {
  dro::SgdConfig cfg = st.sgd;
  cfg.x0 = st.start(train);
  cfg.lambda0 = dro::default_lambda(st.problem, cfg.x0, train);
  return dro::sgd_solve(st.problem, band, cfg, rng);
}

/// Scores every grid cell by the test-split mean cost of its training
/// solution and keeps the cheapest; ties keep the earlier cell.
inline Selection holdout_select(const SampleSet& data, std::span<const double> grid1, std::span<const double> grid2,
                                const TrialSetup& st, Rng& rng, double train_fraction = 0.7) {
  detail::require(data.size() >= 10, "holdout: need N >= 10");
  detail::require(!grid1.empty() && !grid2.empty(), "holdout: empty grid");
  const auto [train, test] = holdout_split(data, train_fraction, rng);
  Selection sel;
  bool found = false;
  std::size_t cell = 0;
  for (double p1 : grid1) {
    for (double p2 : grid2) {
      CellScore cs{p1, p2};
      Rng cell_rng = derive_stream(rng, "cell " + std::to_string(cell++));
      try {
        const DensityBand band = st.sgd_band(train, p1, p2, cell_rng);
        const dro::SaddlePoint sp = solve_on(st, band, train, cell_rng);
        cs.test_cost = mean_cost(st.problem, sp.x, test);
        if (!found || cs.test_cost < sel.score) {
          sel.p1 = p1;
          sel.p2 = p2;
          sel.x = sp.x;
          sel.score = cs.test_cost;
          found = true;
        }
      } catch (const std::exception& e) {
        cs.skipped = true;
        cs.error = e.what();
      }
      sel.cells.push_back(std::move(cs));
    }
  }
  if (!found) throw NumericalFailure("holdout: every grid cell failed (" + sel.cells.front().error + ")");
  return sel;
}

// ---------------------------------------------------------------------------
// Trials

struct TrialReport {
  std::size_t size = 0, trial = 0;
  bool ok = false;
  std::string error;
  double p1 = 0.0, p2 = 0.0;
  Vec x;
  double oos_cost = 0.0;
  double wall_seconds = 0.0;
  std::vector<CellScore> cells;
};

struct Aggregate {
  std::size_t size = 0;
  double mean = 0.0, p20 = 0.0, p80 = 0.0;
  std::size_t count = 0;
};

struct ExperimentResult {
  std::vector<TrialReport> trials;  // ordered by (size, trial)
  std::vector<Aggregate> aggregates;
  std::size_t failures = 0;
};

/// Stream of one trial; depends only on the master seed, N and the trial id.
inline Rng trial_stream(std::uint64_t seed, std::size_t n, std::size_t trial) {
  return Rng(seed, detail::splitmix64(detail::fnv1a("size " + std::to_string(n) + " trial " + std::to_string(trial))));
}

inline TrialReport run_trial(const ExperimentConfig& cfg, const TrialSetup& st, std::size_t n, std::size_t trial) {
  const auto t0 = std::chrono::steady_clock::now();
  TrialReport r;
  r.size = n;
  r.trial = trial;
  try {
    const Rng base = trial_stream(cfg.seed, n, trial);
    Rng data_rng = derive_stream(base, "data"), select_rng = derive_stream(base, "holdout"),
        final_rng = derive_stream(base, "final"), eval_rng = derive_stream(base, "oos");
    const SampleSet data = st.density->sample_set(n, data_rng);
    Selection sel = holdout_select(data, cfg.grid1, cfg.grid2, st, select_rng, cfg.train_fraction);
    r.p1 = sel.p1;
    r.p2 = sel.p2;
    r.cells = std::move(sel.cells);
    const DensityBand band = st.sgd_band(data, sel.p1, sel.p2, final_rng);
    r.x = solve_on(st, band, data, final_rng).x;
    r.oos_cost = mean_cost(st.problem, r.x, st.density->sample_set(cfg.n_large, eval_rng));
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. The first
/// exception thrown by fn is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (err) std::rethrow_exception(err);
}

inline std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Linear interpolation between order statistics (position q (n - 1)).
inline double percentile(std::span<const double> sorted, double q) {
  detail::require(!sorted.empty(), "percentile: empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// Mean and percentiles, all computed from the sorted costs so that the
/// result does not depend on trial order.
inline Aggregate aggregate(std::size_t size, std::span<const double> costs) {
  Aggregate a;
  a.size = size;
  a.count = costs.size();
  if (costs.empty()) return a;
  Vec sorted(costs.begin(), costs.end());
  std::sort(sorted.begin(), sorted.end());
  double s = 0.0;
  for (double c : sorted) s += c;
  a.mean = s / static_cast<double>(sorted.size());
  a.p20 = percentile(sorted, 0.2);
  a.p80 = percentile(sorted, 0.8);
  return a;
}

inline std::vector<Aggregate> aggregate_trials(std::span<const std::size_t> sizes, const std::vector<TrialReport>& trials) {
  std::vector<Aggregate> out;
  for (std::size_t n : sizes) {
    Vec costs;
    for (const auto& t : trials)
      if (t.size == n && t.ok) costs.push_back(t.oos_cost);
    out.push_back(aggregate(n, costs));
  }
  return out;
}

/// Every (size, trial) pair; throws NumericalFailure when more than 10% fail.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const TrialSetup& st, std::size_t jobs) {
  ExperimentResult res;
  res.trials.resize(cfg.sizes.size() * cfg.trials);
  parallel_for(res.trials.size(), jobs, [&](std::size_t i) {
    res.trials[i] = run_trial(cfg, st, cfg.sizes[i / cfg.trials], i % cfg.trials);
  });
  for (const auto& t : res.trials) res.failures += !t.ok;
  res.aggregates = aggregate_trials(cfg.sizes, res.trials);
  if (10 * res.failures > res.trials.size()) {
    std::string first;
    for (const auto& t : res.trials)
      if (!t.ok) {
        first = t.error;
        break;
      }
    throw NumericalFailure("experiment: " + std::to_string(res.failures) + " of " + std::to_string(res.trials.size()) +
                           " trials failed; first error: " + first);
  }
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::size_t jobs = default_jobs()) {
  return run_experiment(cfg, make_setup(cfg), jobs);
}

// ---------------------------------------------------------------------------
// Output files

inline void write_trials_csv(std::ostream& out, const std::vector<TrialReport>& trials, std::size_t dim_x) {
  out << "size,trial,param1,param2";
  for (std::size_t j = 0; j < dim_x; ++j) out << ",x_hat" << j;
  out << ",oos_cost\n";
  for (const auto& t : trials) {
    if (!t.ok) continue;
    out << t.size << ',' << t.trial << ',' << format_double(t.p1) << ',' << format_double(t.p2);
    for (double v : t.x) out << ',' << format_double(v);
    out << ',' << format_double(t.oos_cost) << '\n';
  }
}

inline void write_aggregate_csv(std::ostream& out, const std::vector<Aggregate>& aggs) {
  out << "size,mean,p20,p80\n";
  for (const auto& a : aggs) {
    if (a.count == 0) continue;
    out << a.size << ',' << format_double(a.mean) << ',' << format_double(a.p20) << ',' << format_double(a.p80) << '\n';
  }
}

/// One row per (trial, grid cell); failed trials get a single row with the error.
inline void write_hyperparameter_csv(std::ostream& out, const std::vector<TrialReport>& trials) {
  out << "size,trial,param1,param2,test_cost,status\n";
  for (const auto& t : trials) {
    if (!t.ok && t.cells.empty()) {
      std::string msg = t.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      out << t.size << ',' << t.trial << ",,,,failed: " << msg << '\n';
      continue;
    }
    for (const auto& c : t.cells) {
      out << t.size << ',' << t.trial << ',' << format_double(c.p1) << ',' << format_double(c.p2) << ',';
      if (c.skipped) {
        out << ",skipped\n";
        continue;
      }
      const bool chosen = t.ok && c.p1 == t.p1 && c.p2 == t.p2;
      out << format_double(c.test_cost) << ',' << (chosen ? "chosen" : "") << '\n';
    }
  }
}

struct OutputPaths {
  std::filesystem::path trials, aggregate, hyperparameters;
};

inline OutputPaths write_outputs(const std::filesystem::path& dir, const ExperimentResult& res, std::size_t dim_x) {
  std::filesystem::create_directories(dir);
  OutputPaths p{dir / "trials.csv", dir / "aggregate.csv", dir / "hyperparameters.csv"};
  auto open = [](const std::filesystem::path& f) {
    std::ofstream o(f);
    if (!o) throw NumericalFailure("cannot write '" + f.string() + "'");
    return o;
  };
  auto t = open(p.trials);
  write_trials_csv(t, res.trials, dim_x);
  auto a = open(p.aggregate);
  write_aggregate_csv(a, res.aggregates);
  auto h = open(p.hyperparameters);
  write_hyperparameter_csv(h, res.trials);
  return p;
}

// ---------------------------------------------------------------------------
// Upper-bound frequency

struct UpperBoundReport {
  std::size_t trials = 0, covered = 0;
  double frequency = 0.0;
  Vec robust_value, true_cost;  // per trial
};

/// Over R trials at N = sizes[0] with the band fixed by the first grid cell:
/// solve, then compare the worst-case value v(x) over the band (grid oracle
/// with G cells) with the true expected cost of x from n_large fresh draws.
inline UpperBoundReport probabilistic_upper_bound_check(const ExperimentConfig& cfg, const TrialSetup& st, std::size_t r,
                                                        std::size_t g = 2000, std::size_t jobs = default_jobs()) {
  detail::require(st.density->dim() == 1, "upper bound check: needs a univariate problem");
  detail::require(r >= 1, "upper bound check: need R >= 1");
  const std::size_t n = cfg.sizes.front();
  const double p1 = cfg.grid1.front(), p2 = cfg.grid2.front();
  UpperBoundReport rep;
  rep.trials = r;
  rep.robust_value.resize(r);
  rep.true_cost.resize(r);
  parallel_for(r, jobs, [&](std::size_t t) {
    const Rng base = trial_stream(cfg.seed, n, t);
    Rng data_rng = derive_stream(base, "data"), solve_rng = derive_stream(base, "final"),
        eval_rng = derive_stream(base, "oos");
    const SampleSet data = st.density->sample_set(n, data_rng);
    const DensityBand exact = st.exact_band(data, p1, p2, solve_rng);
    const DensityBand fast = st.sgd_band(data, p1, p2, solve_rng);
    const Vec x = solve_on(st, fast, data, solve_rng).x;
    rep.robust_value[t] = oracle::robust_value_oracle(st.problem, exact, x, g);
    rep.true_cost[t] = mean_cost(st.problem, x, st.density->sample_set(cfg.n_large, eval_rng));
  });
  for (std::size_t t = 0; t < r; ++t) rep.covered += rep.robust_value[t] >= rep.true_cost[t];
  rep.frequency = static_cast<double>(rep.covered) / static_cast<double>(r);
  return rep;
}

inline UpperBoundReport probabilistic_upper_bound_check(const ExperimentConfig& cfg, std::size_t r,
                                                        std::size_t jobs = default_jobs()) {
  return probabilistic_upper_bound_check(cfg, make_setup(cfg), r, 2000, jobs);
}

}  // namespace bandro::experiments
