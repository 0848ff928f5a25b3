// bandro: data generation, density bands, DRO solves, experiments and oracle checks.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "bandro/band_kde.hpp"
#include "bandro/band_sr.hpp"
#include "bandro/dro.hpp"
#include "bandro/experiments.hpp"
#include "bandro/oracle.hpp"
#include "bandro/problems.hpp"
#include "json.hpp"

using namespace bandro;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t effective_seed(std::uint64_t flag) {
  if (const char* env = std::getenv("BANDRO_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw UsageError(std::string("BANDRO_SEED is not an unsigned integer: ") + env);
    return v;
  }
  return flag;
}

/// Writes to --out when given, else stdout.
template <class Fn>
void emit(const std::string& out, Fn&& write) {
  if (out.empty() || out == "-") {
    write(std::cout);
    return;
  }
  std::ofstream f(out);
  if (!f) throw RuntimeFailure("cannot write '" + out + "'");
  write(f);
}

std::optional<problems::TrueDensity> family_density(const std::string& name) {
  if (name.empty()) return std::nullopt;
  return problems::default_density(problems::parse_family(name));
}

// ---------------------------------------------------------------------------
// Band flags shared by band, solve and oracle-check.

struct BandFlags {
  std::string kind = "sr";
  std::string family;
  double alpha = 0.2;
  double c = 1.0;
  std::size_t group = 0;
  std::optional<double> a, b, mode, cap;
  std::size_t mc_samples = 100000;
  std::string kernel = "boxcar";
  std::optional<double> h, delta, holder_c;
  double rho = 1.0;

  void add(CLI::App* app) {
    app->add_option("--kind", kind, "Band type")->check(CLI::IsMember({"sr", "kde"}));
    app->add_option("--family", family, "Take support, mode and cap from a built-in density");
    app->add_option("--alpha", alpha, "Significance level");
    app->add_option("--c", c, "Group-size constant: K = min(ceil(c (N^2 log N)^(1/3)), N - 1)");
    app->add_option("--K", group, "Explicit group size (overrides --c)");
    app->add_option("--a", a, "Support lower end");
    app->add_option("--b", b, "Support upper end");
    app->add_option("--mode", mode, "Mode of the density");
    app->add_option("--cap", cap, "Upper bound U on the density");
    app->add_option("--mc-samples", mc_samples, "Monte Carlo replicates for the SR constants");
    app->add_option("--kernel", kernel, "KDE kernel")->check(CLI::IsMember({"boxcar", "gaussian", "epanechnikov"}));
    app->add_option("--bandwidth", h, "KDE bandwidth (default (log(N/alpha)/N)^(1/(2 rho + m)))");
    app->add_option("--delta", delta, "KDE half width");
    app->add_option("--holder-c", holder_c, "Hoelder constant C for the theoretical delta");
    app->add_option("--rho", rho, "Hoelder exponent for the theoretical delta");
  }

  bool shape_restricted() const { return kind == "sr"; }

  /// Exact band on the data; SR constants are drawn from `rng`.
  DensityBand build(const SampleSet& data, Rng& rng) const {
    const auto dens = family_density(family);
    if (shape_restricted()) {
      if (data.dim() != 1) throw UsageError("shape-restricted bands need univariate data");
      sr::SrParams p;
      auto pick = [&](const std::optional<double>& v, double from_family, const char* flag) {
        if (v) return *v;
        if (dens) return from_family;
        throw UsageError(std::string("sr band needs ") + flag + " or --family");
      };
      p.a = pick(a, dens ? dens->support().lower()[0] : 0.0, "--a");
      p.b = pick(b, dens ? dens->support().upper()[0] : 0.0, "--b");
      p.mode = pick(mode, dens ? dens->mode() : 0.0, "--mode");
      p.cap = pick(cap, dens ? dens->cap() : 0.0, "--cap");
      p.alpha = alpha;
      p.group = group ? group : sr::group_size(data.size(), c);
      p.mc_samples = mc_samples;
      return sr::build_sr_band(data, p, rng);
    }
    kde::KdeParams p;
    p.kernel = kde::parse_kernel(kernel);
    p.h = h ? *h : kde::balanced_bandwidth(data.size(), alpha, rho, data.dim());
    if (delta) {
      p.delta = *delta;
    } else {
      const std::optional<double> u = cap ? cap : (dens ? std::optional<double>(dens->cap()) : std::nullopt);
      if (!holder_c || !u) throw UsageError("kde band needs --delta, or --holder-c with --cap or --family");
      p.delta = kde::delta_theoretical(*holder_c, rho, *u, kde::Kernel(p.kernel, data.dim()), data.size(), alpha, p.h);
    }
    if (a && b && data.dim() == 1) p.box = Box::interval(*a, *b);
    return kde::build_kde_band(data, p);
  }
};

/// Whether the exact band fell back to (0, U).
bool sr_fallback(const DensityBand& band) {
  const auto* m = band.model_as<sr::SrBandModel>();
  return m && !m->feasible();
}

// ---------------------------------------------------------------------------
// Problem and solver flags.

struct ProblemFlags {
  std::string problem = "newsvendor";
  double c_s = 19.0, c_h = 1.0;
  std::optional<double> order_cap;
  double eps = 0.2, gamma = 10.0;

  void add(CLI::App* app) {
    app->add_option("--problem", problem, "Problem")->check(CLI::IsMember({"newsvendor", "portfolio"}));
    app->add_option("--cs", c_s, "Newsvendor shortage cost");
    app->add_option("--ch", c_h, "Newsvendor holding cost");
    app->add_option("--order-cap", order_cap, "Newsvendor order bound (default: band support end)");
    app->add_option("--eps", eps, "CVaR level");
    app->add_option("--gamma", gamma, "Risk-aversion weight");
  }

  bool newsvendor() const { return problem == "newsvendor"; }

  ProblemSpec make(const SampleSet& data, const DensityBand& band, Vec& x0) const {
    if (newsvendor()) {
      if (data.dim() != 1) throw UsageError("newsvendor needs univariate demand data");
      const problems::NewsvendorSpec s{c_s, c_h, order_cap ? *order_cap : band.box().upper()[0]};
      x0 = experiments::newsvendor_start(s, data);
      return problems::make_newsvendor(s);
    }
    const problems::PortfolioSpec s{data.dim(), eps, gamma};
    x0.assign(s.n + 1, 1.0 / static_cast<double>(s.n));
    x0[s.n] = 0.0;
    return problems::make_portfolio(s);
  }
};

struct SgdFlags {
  std::size_t batch = 64, iters = 5000;
  std::optional<double> eta;
  double lambda_scale = 1.0;
  std::string proposal;
  double mixture_weight = 0.1;
  std::string trace;

  void add(CLI::App* app) {
    app->add_option("--batch", batch, "Samples per stochastic subgradient");
    app->add_option("--iters", iters, "Iterations");
    app->add_option("--eta", eta, "Step scale (default 0.1 / |box| * (|F0| + 1))");
    app->add_option("--lambda-scale", lambda_scale, "Multiplier on the lambda step");
    app->add_option("--proposal", proposal, "Sampling proposal (default: kde-mixture for KDE bands, else uniform)")
        ->check(CLI::IsMember({"uniform", "kde-mixture"}));
    app->add_option("--mixture-weight", mixture_weight, "Uniform weight in the KDE mixture proposal");
    app->add_option("--trace", trace, "Write the solver trace CSV here");
  }
};

SampleSet load_data(const std::string& path, std::uint64_t seed) {
  try {
    return read_dataset_csv(path, seed);
  } catch (const InvalidParameter& e) {
    throw RuntimeFailure(e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
  std::uint64_t seed = 1;
  std::string out;
  bool verbose = false;
  void add(CLI::App* app) {
    app->add_option("--seed", seed, "Random seed (BANDRO_SEED overrides)");
    app->add_option("--out", out, "Output path");
    app->add_flag("--verbose", verbose, "Show numerical warnings");
  }
};

int cmd_gen_data(const Common& com, const std::string& family, std::size_t n) {
  const problems::TrueDensity d = problems::default_density(problems::parse_family(family));
  Rng rng(effective_seed(com.seed));
  const SampleSet data = d.sample_set(n, rng);
  emit(com.out, [&](std::ostream& o) { write_dataset_csv(o, data); });
  std::cerr << "wrote " << n << " draws from " << family << " (m=" << d.dim() << ")\n";
  return 0;
}

int cmd_band(const Common& com, const std::string& data_path, const BandFlags& bf, std::size_t grid, double slack) {
  const std::uint64_t seed = effective_seed(com.seed);
  const SampleSet data = load_data(data_path, seed);
  if (data.dim() > 2) throw UsageError("band curves are written for 1-D and 2-D data only");
  Rng rng(seed);
  const DensityBand band = bf.build(data, rng);
  if (sr_fallback(band)) throw RuntimeFailure("shape-restricted band infeasible: no unimodal capped density meets the brackets");
  const Box& box = band.box();
  double width = 0.0;
  if (data.dim() == 1) {
    const Vec xs = sr::uniform_grid(box.lower()[0], box.upper()[0], grid);
    const auto rows = sr::dump_band_curve(band, xs);
    for (const auto& r : rows) width += r.upper - r.lower;
    width /= static_cast<double>(rows.size());
    emit(com.out, [&](std::ostream& o) { sr::write_band_curve_csv(o, rows); });
  } else {
    const Vec xs = sr::uniform_grid(box.lower()[0], box.upper()[0], grid);
    const Vec ys = sr::uniform_grid(box.lower()[1], box.upper()[1], grid);
    for (double x : xs)
      for (double y : ys) {
        const BandValue v = band.eval(Vec{x, y});
        width += v.upper - v.lower;
      }
    width /= static_cast<double>(grid * grid);
    emit(com.out, [&](std::ostream& o) { kde::write_band_grid_csv(o, band, xs, ys); });
  }
  const oracle::GridBand gb = oracle::discretize(band, std::max<std::size_t>(grid, 10));
  const bool feasible = gb.lower_mass() <= 1.0 + slack && gb.upper_mass() >= 1.0 - slack;
  std::cerr << "band " << bf.kind << ": N=" << data.size() << " mean width " << format_double(width)
            << ", sum l w = " << format_double(gb.lower_mass()) << ", sum u w = " << format_double(gb.upper_mass())
            << (feasible ? " (feasible)" : " (infeasible)") << "\n";
  if (!feasible) throw RuntimeFailure("band infeasible at this resolution: no density fits between l and u");
  return 0;
}

int cmd_solve(const Common& com, const std::string& data_path, const BandFlags& bf, const ProblemFlags& pf,
              const SgdFlags& sf, bool with_oracle, std::size_t grid) {
  const std::uint64_t seed = effective_seed(com.seed);
  const SampleSet data = load_data(data_path, seed);
  Rng rng(seed);
  Rng band_rng = derive_stream(rng, "band"), solve_rng = derive_stream(rng, "solve");
  const DensityBand exact = bf.build(data, band_rng);
  const DensityBand fast = bf.shape_restricted() ? sr::tabulate_sr_band(exact) : exact;
  dro::SgdConfig cfg;
  const ProblemSpec prob = pf.make(data, exact, cfg.x0);
  cfg.batch = sf.batch;
  cfg.iters = sf.iters;
  cfg.lambda0 = dro::default_lambda(prob, cfg.x0, data);
  cfg.eta = sf.eta ? *sf.eta : dro::default_eta(exact, cfg.lambda0);
  cfg.lambda_step_scale = sf.lambda_scale;
  cfg.proposal = sf.proposal.empty() ? (bf.shape_restricted() ? dro::ProposalKind::Uniform : dro::ProposalKind::KdeMixture)
                                     : dro::parse_proposal(sf.proposal);
  cfg.mixture_weight = sf.mixture_weight;
  cfg.trace_every = sf.trace.empty() ? 0 : std::max<std::size_t>(1, sf.iters / 1000);
  const dro::SaddlePoint sp = dro::sgd_solve(prob, fast, cfg, solve_rng);

  json out;
  out["x"] = sp.x;
  out["lambda"] = sp.lambda;
  out["F_hat"] = sp.f_hat_tail();
  out["iters"] = sp.iters;
  if (with_oracle) {
    if (exact.dim() > 2) throw UsageError("--oracle needs 1-D or 2-D data");
    const double v = oracle::robust_value_oracle(prob, exact, sp.x, grid);
    const double f = dro::dual_objective(sp.x, sp.lambda, exact, prob, grid);
    out["oracle_value"] = v;
    out["dual_value"] = f;
    out["duality_gap"] = f - v;
    out["relative_gap"] = (f - v) / std::max(std::abs(v), 1e-12);
  }
  if (!sf.trace.empty()) emit(sf.trace, [&](std::ostream& o) { dro::write_trace_csv(o, sp.trace); });
  emit(com.out, [&](std::ostream& o) { o << out.dump(2) << '\n'; });
  return 0;
}

int cmd_experiment(const Common& com, const std::string& config, bool desk, std::optional<std::size_t> trials,
                   std::size_t jobs, bool seed_given) {
  experiments::ExperimentConfig cfg = experiments::read_config(config);
  if (desk) experiments::apply_desk(cfg);
  if (trials) cfg.trials = *trials;
  if (seed_given || std::getenv("BANDRO_SEED")) cfg.seed = effective_seed(com.seed);
  cfg.validate();
  const experiments::TrialSetup st = experiments::make_setup(cfg);
  experiments::ExperimentResult res;
  try {
    res = experiments::run_experiment(cfg, st, jobs ? jobs : experiments::default_jobs());
  } catch (const NumericalFailure& e) {
    throw RuntimeFailure(e.what());
  }
  const auto paths = experiments::write_outputs(com.out.empty() ? "results" : com.out, res, st.problem.dim_x);
  std::cerr << cfg.name << ": " << res.trials.size() - res.failures << " of " << res.trials.size() << " trials ok\n";
  for (const auto& a : res.aggregates)
    std::cerr << "  N=" << a.size << " mean " << format_double(a.mean) << " p20 " << format_double(a.p20) << " p80 "
              << format_double(a.p80) << "\n";
  std::cerr << "wrote " << paths.trials.string() << ", " << paths.aggregate.string() << ", "
            << paths.hyperparameters.string() << "\n";
  return 0;
}

int cmd_oracle_check(const Common& com, std::size_t instances, std::size_t max_cells, const std::string& data_path,
                     const BandFlags& bf, const ProblemFlags& pf, const std::vector<double>& xs, std::size_t grid) {
  const std::uint64_t seed = effective_seed(com.seed);
  json out;
  bool ok = true;
  if (data_path.empty()) {
    // Random instances: greedy water-filling against the LP solver.
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t t = 0; t < instances; ++t) {
      const std::size_t g = 1 + rng.index(max_cells);
      oracle::GridBand gb;
      Vec f(g);
      double lm = 0.0, um = 0.0;
      for (std::size_t c = 0; c < g; ++c) {
        const double l = rng.uniform(0.0, 1.0), u = l + rng.uniform(0.0, 2.0);
        gb.cells.push_back({{static_cast<double>(c)}, 1.0 / static_cast<double>(g), l, u});
        lm += l / static_cast<double>(g);
        um += u / static_cast<double>(g);
        f[c] = rng.normal();
      }
      // Rescale into the feasible region sum l w <= 1 <= sum u w.
      const double sl = lm > 0.9 ? 0.9 / lm : 1.0;
      for (auto& c : gb.cells) {
        const double slack = c.upper - c.lower;
        c.lower *= sl;
        c.upper = c.lower + slack;
      }
      if (gb.upper_mass() < 1.1) {
        const double add = 1.1 - gb.upper_mass();
        for (auto& c : gb.cells) c.upper += add;
      }
      const double d = std::abs(oracle::inner_sup(gb, f).value - oracle::inner_sup_lp(gb, f).value);
      worst = std::max(worst, d);
    }
    ok = worst <= 1e-9;
    out["check"] = "greedy_vs_lp";
    out["instances"] = instances;
    out["max_abs_difference"] = worst;
  } else {
    // Strong duality on a real band: min over lambda of F against the grid oracle.
    const SampleSet data = load_data(data_path, seed);
    if (data.dim() > 2) throw UsageError("the duality check needs 1-D or 2-D data");
    Rng rng(seed);
    const DensityBand band = bf.build(data, rng);
    Vec x0;
    const ProblemSpec prob = pf.make(data, band, x0);
    std::vector<Vec> points;
    if (xs.empty())
      points.push_back(x0);
    else if (xs.size() % prob.dim_x == 0)
      for (std::size_t i = 0; i < xs.size(); i += prob.dim_x) points.emplace_back(xs.begin() + i, xs.begin() + i + prob.dim_x);
    else
      throw UsageError("--x needs a multiple of " + std::to_string(prob.dim_x) + " values");
    double worst = 0.0;
    json rows = json::array();
    for (Vec x : points) {
      prob.project(x);
      const double v = oracle::robust_value_oracle(prob, band, x, grid);
      const double f = dro::min_dual_objective(x, band, prob, grid).value;
      const double rel = std::abs(f - v) / std::max(std::abs(v), 1e-12);
      worst = std::max(worst, rel);
      rows.push_back({{"x", x}, {"oracle_value", v}, {"dual_min", f}, {"relative_gap", rel}});
    }
    ok = worst <= 1e-3;
    out["check"] = "strong_duality";
    out["points"] = rows;
    out["max_relative_gap"] = worst;
  }
  out["pass"] = ok;
  emit(com.out, [&](std::ostream& o) { o << out.dump(2) << '\n'; });
  if (!ok) throw RuntimeFailure("oracle check failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributionally robust optimisation over density confidence bands"};
  app.require_subcommand(1);

  Common gen_c, band_c, solve_c, exp_c, orc_c;
  std::string family = "truncated_normal";
  std::size_t n = 100;
  auto* gen = app.add_subcommand("gen-data", "Draw a dataset from a built-in density");
  gen_c.add(gen);
  gen->add_option("--family", family, "Density family")->check(
      CLI::IsMember({"truncated_normal", "scaled_beta", "truncated_exponential", "factor_normal"}));
  gen->add_option("--n", n, "Number of draws")->check(CLI::PositiveNumber);

  std::string band_data;
  BandFlags band_flags;
  std::size_t band_grid = 201;
  auto* band = app.add_subcommand("band", "Build a density band and write its curve");
  band_c.add(band);
  band->add_option("--data", band_data, "Dataset CSV")->required();
  band_flags.add(band);
  band->add_option("--grid", band_grid, "Grid points per axis")->check(CLI::Range(2, 100000));
  double mass_slack = 1e-3;
  band->add_option("--mass-slack", mass_slack, "Quadrature slack on sum l w <= 1 <= sum u w");

  std::string solve_data;
  BandFlags solve_band;
  ProblemFlags solve_prob;
  SgdFlags solve_sgd;
  bool with_oracle = false;
  std::size_t solve_grid = 2000;
  auto* solve = app.add_subcommand("solve", "Solve the robust problem by stochastic subgradients");
  solve_c.add(solve);
  solve->add_option("--data", solve_data, "Dataset CSV")->required();
  solve_band.add(solve);
  solve_prob.add(solve);
  solve_sgd.add(solve);
  solve->add_flag("--oracle", with_oracle, "Append the grid-oracle value and the duality gap");
  solve->add_option("--grid", solve_grid, "Oracle and quadrature resolution")->check(CLI::Range(100, 1000000));

  std::string config;
  bool desk = false;
  std::optional<std::size_t> trials;
  std::size_t jobs = 0;
  auto* exp = app.add_subcommand("experiment", "Run a holdout-validated multi-trial experiment");
  exp_c.add(exp);
  exp->add_option("--config", config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  exp->add_flag("--desk", desk, "Desk scale: 20 trials, 20000 evaluation draws");
  exp->add_option("--trials", trials, "Override the number of trials")->check(CLI::PositiveNumber);
  exp->add_option("--jobs", jobs, "Worker threads (default: logical cores)");

  std::size_t instances = 1000, max_cells = 200, orc_grid = 2000;
  std::string orc_data;
  BandFlags orc_band;
  ProblemFlags orc_prob;
  std::vector<double> orc_x;
  auto* orc = app.add_subcommand("oracle-check", "Cross-check the inner-supremum oracle");
  orc_c.add(orc);
  orc->add_option("--instances", instances, "Random instances (greedy against LP)")->check(CLI::PositiveNumber);
  orc->add_option("--max-cells", max_cells, "Largest random grid")->check(CLI::PositiveNumber);
  orc->add_option("--data", orc_data, "Dataset CSV: check strong duality on its band instead");
  orc_band.add(orc);
  orc_prob.add(orc);
  orc->add_option("--x", orc_x, "Decision(s) for the duality check");
  orc->add_option("--grid", orc_grid, "Oracle and quadrature resolution")->check(CLI::Range(100, 1000000));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  set_quiet_warnings(!(band_c.verbose || solve_c.verbose || exp_c.verbose || orc_c.verbose));
  try {
    if (*gen) return cmd_gen_data(gen_c, family, n);
    if (*band) return cmd_band(band_c, band_data, band_flags, band_grid, mass_slack);
    if (*solve) return cmd_solve(solve_c, solve_data, solve_band, solve_prob, solve_sgd, with_oracle, solve_grid);
    if (*exp) return cmd_experiment(exp_c, config, desk, trials, jobs, exp->count("--seed") > 0);
    if (*orc) return cmd_oracle_check(orc_c, instances, max_cells, orc_data, orc_band, orc_prob, orc_x, orc_grid);
  } catch (const UsageError& e) {
    std::cerr << "bandro: " << e.what() << "\n" << app.help();
    return 1;
  } catch (const InvalidParameter& e) {
    std::cerr << "bandro: invalid parameter: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "bandro: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
