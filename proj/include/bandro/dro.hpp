#pragma once

// Dual objective of the inner supremum over a density band and the projected
// stochastic subgradient method that minimises it jointly over (x, lambda).
//
//   F(x, lambda) = lambda - int l (lambda - f)_+ + int u (f - lambda)_+

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <vector>

#include "bandro/band_kde.hpp"
#include "bandro/core.hpp"

namespace bandro::dro {

/// Euclidean projection onto the probability simplex (sort and threshold).
inline void project_simplex_inplace(std::span<double> w) {
  if (w.empty()) return;
  Vec u(w.begin(), w.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  for (double& v : w) v = std::max(v - theta, 0.0);
}

inline Vec project_simplex(std::span<const double> w) {
  Vec out(w.begin(), w.end());
  project_simplex_inplace(out);
  return out;
}

// ---------------------------------------------------------------------------
// Sampling proposals for the stochastic subgradient.

/// Distribution q of the points at which the band is sampled.
class Proposal {
 public:
  virtual ~Proposal() = default;
  /// Writes a draw into xi and returns the importance weight 1 / q(xi).
  virtual double draw(Rng& rng, std::span<double> xi) const = 0;
};

/// Uniform on the band box; every weight equals the box volume.
class UniformProposal final : public Proposal {
 public:
  explicit UniformProposal(Box box) : box_(std::move(box)), volume_(box_.volume()) {}
  double draw(Rng& rng, std::span<double> xi) const override {
    box_.sample_uniform(rng, xi);
    return volume_;
  }

 private:
  Box box_;
  double volume_;
};

/// omega * Uniform(box) + (1 - omega) * KDE. Keeps the estimator unbiased
/// while concentrating draws where a kernel band carries mass.
class KdeMixtureProposal final : public Proposal {
 public:
  KdeMixtureProposal(const DensityBand& band, double omega) : band_(band), omega_(omega) {
    model_ = band_.model_as<kde::KdeBandModel>();
    detail::require(model_ != nullptr, "kde mixture proposal: band is not a kernel band");
    detail::require(omega > 0.0 && omega <= 1.0, "kde mixture proposal: weight must lie in (0, 1]");
    volume_ = band_.box().volume();
  }
  double draw(Rng& rng, std::span<double> xi) const override {
    if (rng.uniform() < omega_)
      band_.box().sample_uniform(rng, xi);
    else
      model_->sample(rng, xi);
    const double q = (band_.box().contains(xi) ? omega_ / volume_ : 0.0) + (1.0 - omega_) * model_->estimate(xi);
    return 1.0 / q;
  }

 private:
  DensityBand band_;
  const kde::KdeBandModel* model_ = nullptr;
  double omega_;
  double volume_ = 1.0;
};

enum class ProposalKind { Uniform, KdeMixture };

inline ProposalKind parse_proposal(std::string_view s) {
  if (s == "uniform") return ProposalKind::Uniform;
  if (s == "kde-mixture") return ProposalKind::KdeMixture;
  throw InvalidParameter("unknown proposal '" + std::string(s) + "'");
}

inline std::unique_ptr<Proposal> make_proposal(const DensityBand& band, ProposalKind kind, double omega) {
  if (kind == ProposalKind::KdeMixture) return std::make_unique<KdeMixtureProposal>(band, omega);
  return std::make_unique<UniformProposal>(band.box());
}

// ---------------------------------------------------------------------------
// Stochastic subgradient.

struct StochasticGradient {
  Vec gx;
  double glambda = 0.0;
  double f_hat = 0.0;  // unbiased estimate of F at the same point
};

namespace impl {

struct Workspace {
  Vec xi, g;
};

inline void accumulate_gradient(std::span<const double> x, double lambda, const DensityBand& band,
                                const ProblemSpec& prob, std::size_t batch, Rng& rng, const Proposal& q,
                                Workspace& ws, StochasticGradient& out) {
  ws.xi.resize(band.dim());
  ws.g.resize(prob.dim_x);
  out.gx.assign(prob.dim_x, 0.0);
  double mass = 0.0, excess = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double w = q.draw(rng, ws.xi);
    const BandValue b = band.eval(ws.xi);
    const double fv = prob.evaluate(x, ws.xi);
    // Points on the level set f = lambda go to the upper branch.
    const double dens = (fv < lambda ? b.lower : b.upper) * w;
    if (dens != 0.0) {
      prob.subgrad(x, ws.xi, ws.g);
      for (std::size_t j = 0; j < ws.g.size(); ++j) out.gx[j] += dens * ws.g[j];
    }
    mass += dens;
    excess += dens * (fv - lambda);
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (double& v : out.gx) v *= inv_b;
  out.glambda = 1.0 - mass * inv_b;
  out.f_hat = lambda + excess * inv_b;
}

}  // namespace impl

inline StochasticGradient stochastic_subgradient(std::span<const double> x, double lambda, const DensityBand& band,
                                                 const ProblemSpec& prob, std::size_t batch, Rng& rng,
                                                 const Proposal& q) {
  detail::require(batch >= 1, "stochastic_subgradient: batch must be >= 1");
  detail::require(x.size() == prob.dim_x, "stochastic_subgradient: decision has wrong dimension");
  impl::Workspace ws;
  StochasticGradient out;
  impl::accumulate_gradient(x, lambda, band, prob, batch, rng, q, ws, out);
  return out;
}

/// Uniform sampling on the band box.
inline StochasticGradient stochastic_subgradient(std::span<const double> x, double lambda, const DensityBand& band,
                                                 const ProblemSpec& prob, std::size_t batch, Rng& rng) {
  return stochastic_subgradient(x, lambda, band, prob, batch, rng, UniformProposal(band.box()));
}

// ---------------------------------------------------------------------------
// Deterministic dual objective by tensor midpoint quadrature (m <= 2).

struct QuadCell {
  double f, lower, upper, weight;
};

inline std::vector<QuadCell> quadrature_cells(std::span<const double> x, const DensityBand& band,
                                              const ProblemSpec& prob, std::size_t nodes) {
  detail::require(nodes >= 100, "dual_objective: need at least 100 quadrature nodes");
  detail::require(band.dim() <= 2, "dual_objective: quadrature supports m <= 2; use the Monte Carlo estimate");
  const Box& box = band.box();
  const std::size_t m = band.dim();
  std::vector<QuadCell> cells;
  Vec xi(m);
  const double w0 = box.width(0) / static_cast<double>(nodes);
  if (m == 1) {
    cells.reserve(nodes);
    for (std::size_t i = 0; i < nodes; ++i) {
      xi[0] = box.lower()[0] + (static_cast<double>(i) + 0.5) * w0;
      const BandValue b = band.eval(xi);
      cells.push_back({prob.evaluate(x, xi), b.lower, b.upper, w0});
    }
    return cells;
  }
  const double w1 = box.width(1) / static_cast<double>(nodes);
  cells.reserve(nodes * nodes);
  for (std::size_t i = 0; i < nodes; ++i) {
    xi[0] = box.lower()[0] + (static_cast<double>(i) + 0.5) * w0;
    for (std::size_t j = 0; j < nodes; ++j) {
      xi[1] = box.lower()[1] + (static_cast<double>(j) + 0.5) * w1;
      const BandValue b = band.eval(xi);
      cells.push_back({prob.evaluate(x, xi), b.lower, b.upper, w0 * w1});
    }
  }
  return cells;
}

inline double dual_value(const std::vector<QuadCell>& cells, double lambda) {
  double s = lambda;
  for (const auto& c : cells) {
    if (c.f < lambda)
      s -= c.weight * c.lower * (lambda - c.f);
    else
      s += c.weight * c.upper * (c.f - lambda);
  }
  return s;
}

/// F(x, lambda) with `nodes` midpoint cells per axis.
inline double dual_objective(std::span<const double> x, double lambda, const DensityBand& band,
                             const ProblemSpec& prob, std::size_t nodes) {
  return dual_value(quadrature_cells(x, band, prob, nodes), lambda);
}

struct DualMinimum {
  double lambda = 0.0;
  double value = 0.0;
};

/// Exact minimiser over lambda of the quadrature F, which is convex and
/// piecewise linear with kinks at the cell values of f.
inline DualMinimum minimize_dual_over_lambda(const std::vector<QuadCell>& cells) {
  detail::require(!cells.empty(), "minimize_dual: no cells");
  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cells[a].f < cells[b].f; });
  // Slope just right of the k-th kink: 1 - sum_{f <= kink} w l - sum_{f > kink} w u.
  double upper_mass = 0.0, total_lower = 0.0;
  for (const auto& c : cells) {
    upper_mass += c.weight * c.upper;
    total_lower += c.weight * c.lower;
  }
  if (upper_mass < 1.0 - 1e-6 || total_lower > 1.0 + 1e-6)
    throw InvalidParameter("minimize_dual: band holds no density at this resolution, F is unbounded below");
  double lower_mass = 0.0;
  std::size_t best = order.back();
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& c = cells[order[k]];
    lower_mass += c.weight * c.lower;
    upper_mass -= c.weight * c.upper;
    const bool tie_next = k + 1 < order.size() && cells[order[k + 1]].f == c.f;
    if (tie_next) continue;
    if (1.0 - lower_mass - upper_mass >= 0.0) {
      best = order[k];
      break;
    }
  }
  const double lam = cells[best].f;
  return {lam, dual_value(cells, lam)};
}

inline DualMinimum min_dual_objective(std::span<const double> x, const DensityBand& band, const ProblemSpec& prob,
                                      std::size_t nodes) {
  return minimize_dual_over_lambda(quadrature_cells(x, band, prob, nodes));
}

/// Monte Carlo estimate of F with uniform draws on the band box; any m.
inline double dual_objective_mc(std::span<const double> x, double lambda, const DensityBand& band,
                                const ProblemSpec& prob, std::size_t samples, Rng& rng) {
  detail::require(samples >= 1, "dual_objective_mc: need at least one sample");
  const double vol = band.box().volume();
  Vec xi(band.dim());
  double s = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    band.box().sample_uniform(rng, xi);
    const BandValue b = band.eval(xi);
    const double fv = prob.evaluate(x, xi);
    s += fv < lambda ? -b.lower * (lambda - fv) : b.upper * (fv - lambda);
  }
  return lambda + vol * s / static_cast<double>(samples);
}

// ---------------------------------------------------------------------------
// Projected SGD with step-weighted averaging.

struct SgdConfig {
  std::size_t batch = 64;
  double eta = 0.1;  // eta_k = eta / sqrt(k + 1)
  std::size_t iters = 1000;
  Vec x0;
  double lambda0 = 0.0;
  /// Multiplies the lambda step; equivalent to rescaling lambda.
  double lambda_step_scale = 1.0;
  ProposalKind proposal = ProposalKind::Uniform;
  double mixture_weight = 0.1;
  std::size_t trace_every = 0;  // 0 disables the trace
};

struct TraceRow {
  std::size_t iter;
  double f_hat, lambda, step;
};

struct SaddlePoint {
  Vec x;
  double lambda = 0.0;
  /// Per-iterate unbiased F estimates.
  Vec history;
  std::vector<TraceRow> trace;
  std::size_t iters = 0;

  /// Mean of the per-iterate estimates over the last half of the run.
  double f_hat_tail() const {
    if (history.empty()) return 0.0;
    const std::size_t from = history.size() / 2;
    return std::accumulate(history.begin() + static_cast<std::ptrdiff_t>(from), history.end(), 0.0) /
           static_cast<double>(history.size() - from);
  }
};

inline constexpr double kDivergenceLimit = 1e9;

inline SaddlePoint sgd_solve(const ProblemSpec& prob, const DensityBand& band, const SgdConfig& cfg, Rng& rng) {
  detail::require(cfg.batch >= 1, "sgd: batch must be >= 1");
  detail::require(cfg.eta > 0.0 && std::isfinite(cfg.eta), "sgd: eta must be positive");
  detail::require(cfg.iters >= 1, "sgd: need at least one iteration");
  detail::require(cfg.lambda_step_scale > 0.0, "sgd: lambda step scale must be positive");
  detail::require(cfg.x0.size() == prob.dim_x, "sgd: x0 has the wrong dimension");
  detail::require(std::isfinite(cfg.lambda0), "sgd: lambda0 must be finite");

  const auto q = make_proposal(band, cfg.proposal, cfg.mixture_weight);
  Vec x = cfg.x0;
  prob.project(x);
  double lambda = cfg.lambda0;

  SaddlePoint out;
  out.x.assign(prob.dim_x, 0.0);
  out.history.reserve(cfg.iters);
  double lam_sum = 0.0, eta_sum = 0.0;
  impl::Workspace ws;
  StochasticGradient g;
  for (std::size_t k = 0; k < cfg.iters; ++k) {
    impl::accumulate_gradient(x, lambda, band, prob, cfg.batch, rng, *q, ws, g);
    const double step = cfg.eta / std::sqrt(static_cast<double>(k + 1));
    for (std::size_t j = 0; j < x.size(); ++j) out.x[j] += step * x[j];
    lam_sum += step * lambda;
    eta_sum += step;
    out.history.push_back(g.f_hat);
    if (cfg.trace_every && k % cfg.trace_every == 0) out.trace.push_back({k, g.f_hat, lambda, step});

    double norm2 = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      x[j] -= step * g.gx[j];
    }
    prob.project(x);
    lambda -= step * cfg.lambda_step_scale * g.glambda;
    for (double v : x) norm2 += v * v;
    if (!(std::sqrt(norm2) <= kDivergenceLimit) || !(std::abs(lambda) <= kDivergenceLimit))
      throw NumericalFailure("sgd: iterates diverged past 1e9 at iteration " + std::to_string(k));
  }
  for (double& v : out.x) v /= eta_sum;
  out.lambda = lam_sum / eta_sum;
  out.iters = cfg.iters;
  return out;
}

/// Starting lambda: the mean of f(x0, .) over the data.
inline double default_lambda(const ProblemSpec& prob, std::span<const double> x0, const SampleSet& data) {
  return mean_cost(prob, x0, data);
}

/// Crude step scale 0.1 / |I| * (|F0| + 1).
inline double default_eta(const DensityBand& band, double f0) {
  return 0.1 / band.box().volume() * (std::abs(f0) + 1.0);
}

inline void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << "iter,F_hat,lambda,step\n";
  for (const auto& r : rows)
    out << r.iter << ',' << format_double(r.f_hat) << ',' << format_double(r.lambda) << ','
        << format_double(r.step) << '\n';
}

}  // namespace bandro::dro
