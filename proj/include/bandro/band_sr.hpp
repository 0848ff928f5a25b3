#pragma once

// Shape-restricted confidence band for a unimodal univariate density.
//
// Order statistics are grouped K at a time; the probability mass between
// consecutive group anchors is bracketed by [c_minus, c_plus], estimated by
// Monte Carlo from the exact joint law of uniform spacings. The band at a
// point xi is the smallest / largest value any unimodal, U-capped step
// density consistent with those mass brackets can take at xi, found by two
// small LPs.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <memory>
#include <vector>

#include "bandro/core.hpp"
#include "bandro/lp.hpp"

namespace bandro::sr {

/// Group size K(N, c) = min{ceil(c (N^2 log N)^{1/3}), N - 1}, at least 1.
inline std::size_t group_size(std::size_t n, double c) {
  detail::require(n >= 2, "group_size: need N >= 2");
  detail::require(c > 0.0, "group_size: c must be positive");
  const double nn = static_cast<double>(n);
  const double k = std::ceil(c * std::cbrt(nn * nn * std::log(nn)));
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, n - 1);
}

/// 1-based ranks k_1 < ... < k_M of the group anchors.
inline std::vector<std::size_t> anchor_ranks(std::size_t n, std::size_t k) {
  detail::require(k >= 1 && k < n, "anchor_ranks: need 1 <= K < N");
  const std::size_t m_floor = n / k;
  const std::size_t m_ceil = (n + k - 1) / k;
  std::vector<std::size_t> ranks;
  for (std::size_t i = 1; i <= m_floor; ++i) ranks.push_back((i - 1) * k + 1);
  if (m_ceil != m_floor) ranks.push_back(n);
  return ranks;
}

/// Gamma shapes of the Dirichlet(1, ..., 1) representation of uniform
/// spacings, grouped as: [mass below anchor 1, gap 2, ..., gap M, mass above
/// anchor M]. The shapes sum to N + 1; gap i has shape k_i - k_{i-1}.
inline std::vector<double> spacing_shapes(std::size_t n, std::size_t k) {
  const auto ranks = anchor_ranks(n, k);
  std::vector<double> shapes;
  shapes.push_back(static_cast<double>(ranks.front()));
  for (std::size_t i = 1; i < ranks.size(); ++i)
    shapes.push_back(static_cast<double>(ranks[i] - ranks[i - 1]));
  shapes.push_back(static_cast<double>(n + 1 - ranks.back()));
  return shapes;
}

/// One Monte Carlo replicate of the constrained gaps (Delta_2, ..., Delta_M).
inline void draw_spacings(std::span<const double> shapes, Rng& rng, std::span<double> out) {
  double total = 0.0;
  const double lead = rng.gamma(shapes.front());
  total += lead;
  for (std::size_t i = 1; i + 1 < shapes.size(); ++i) {
    out[i - 1] = rng.gamma(shapes[i]);
    total += out[i - 1];
  }
  total += rng.gamma(shapes.back());
  for (double& v : out) v /= total;
}

struct CBounds {
  double lower = 0.0;
  double upper = 1.0;
  double coverage = 1.0;  // joint empirical coverage on the estimation replicates
};

/// Constants with P{c_minus <= Delta_i <= c_plus for every group i} >= 1 - alpha.
/// Starts from the alpha/2 quantile of min_i Delta_i and the 1 - alpha/2
/// quantile of max_i Delta_i and widens both by one order statistic at a time
/// until joint coverage holds on the same replicates.
inline CBounds estimate_c_bounds(std::size_t n, std::size_t k, double alpha, std::size_t samples,
                                 Rng& rng) {
  detail::require(k >= 1 && k < n, "estimate_c_bounds: need 1 <= K < N");
  detail::require(alpha > 0.0 && alpha < 1.0, "estimate_c_bounds: alpha must lie in (0, 1)");
  detail::require(samples >= 1000, "estimate_c_bounds: need at least 1000 Monte Carlo samples");
  const auto shapes = spacing_shapes(n, k);
  const std::size_t gaps = shapes.size() - 2;
  Vec mins(samples), maxs(samples), draw(gaps);
  for (std::size_t s = 0; s < samples; ++s) {
    draw_spacings(shapes, rng, draw);
    const auto [lo, hi] = std::minmax_element(draw.begin(), draw.end());
    mins[s] = *lo;
    maxs[s] = *hi;
  }
  Vec smin = mins, smax = maxs;
  std::sort(smin.begin(), smin.end());
  std::sort(smax.begin(), smax.end());
  const double sd = static_cast<double>(samples);
  std::size_t ilo = static_cast<std::size_t>(std::floor(0.5 * alpha * sd));
  std::size_t ihi = static_cast<std::size_t>(std::max(0.0, std::ceil((1.0 - 0.5 * alpha) * sd) - 1.0));
  ilo = std::min(ilo, samples - 1);
  ihi = std::min(ihi, samples - 1);

  CBounds cb;
  while (true) {
    cb.lower = smin[ilo];
    cb.upper = smax[ihi];
    std::size_t hit = 0;
    for (std::size_t s = 0; s < samples; ++s) hit += (mins[s] >= cb.lower && maxs[s] <= cb.upper);
    cb.coverage = static_cast<double>(hit) / sd;
    if (cb.coverage >= 1.0 - alpha || (ilo == 0 && ihi == samples - 1)) break;
    if (ilo > 0) --ilo;
    if (ihi + 1 < samples) ++ihi;
  }
  cb.lower = std::clamp(cb.lower, 0.0, 1.0);
  cb.upper = std::clamp(cb.upper, cb.lower, 1.0);
  return cb;
}

struct SrParams {
  double a = 0.0;
  double b = 1.0;
  double mode = 0.5;
  double cap = 1.0;  // U
  double alpha = 0.2;
  std::size_t group = 1;  // K
  std::size_t mc_samples = 100000;
};

/// Immutable state of a shape-restricted band; eval builds and solves its
/// own LPs, so concurrent calls are safe.
class SrBandModel final : public BandModel {
 public:
  SrBandModel(SrParams params, Vec order_stats, CBounds cb)
      : p_(params), sorted_(std::move(order_stats)), cb_(cb) {
    for (std::size_t r : anchor_ranks(sorted_.size(), p_.group)) anchors_.push_back(sorted_[r - 1]);
    feasible_ = check_feasible();
  }

  const SrParams& params() const { return p_; }
  const Vec& order_statistics() const { return sorted_; }
  const Vec& anchors() const { return anchors_; }
  const CBounds& c_bounds() const { return cb_; }
  /// False when no unimodal capped density meets the mass brackets; the band
  /// then degenerates to (0, U).
  bool feasible() const { return feasible_; }

  /// Distinct sorted breakpoints {a, b, mode, xi, anchors}.
  Vec breakpoints(double xi) const {
    Vec z = anchors_;
    z.push_back(p_.a);
    z.push_back(p_.b);
    z.push_back(p_.mode);
    z.push_back(xi);
    std::sort(z.begin(), z.end());
    z.erase(std::unique(z.begin(), z.end()), z.end());
    return z;
  }

  /// The cell polyhedron for breakpoints z: one variable per cell
  /// (z_j, z_{j+1}), plus `extra` trailing variables left unconstrained
  /// except for their bounds.
  lp::LpProblem polyhedron(const Vec& z, std::size_t extra = 0) const {
    const std::size_t cells = z.size() - 1;
    const std::size_t nv = cells + extra;
    lp::LpProblem prob(nv);
    for (std::size_t j = 0; j < nv; ++j) prob.set_bounds(j, 0.0, p_.cap);
    const std::size_t jmode =
        static_cast<std::size_t>(std::lower_bound(z.begin(), z.end(), p_.mode) - z.begin());
    // Nondecreasing up to the mode, nonincreasing after it.
    for (std::size_t j = 0; j + 1 < jmode && j + 1 < cells; ++j) {
      Vec row(nv, 0.0);
      row[j] = 1.0;
      row[j + 1] = -1.0;
      prob.add_row(std::move(row), std::nullopt, 0.0);
    }
    for (std::size_t j = jmode; j + 1 < cells; ++j) {
      Vec row(nv, 0.0);
      row[j] = 1.0;
      row[j + 1] = -1.0;
      prob.add_row(std::move(row), 0.0, std::nullopt);
    }
    for (std::size_t i = 1; i < anchors_.size(); ++i) {
      Vec row(nv, 0.0);
      for (std::size_t j = 0; j < cells; ++j) {
        if (z[j] >= anchors_[i - 1] && z[j] < anchors_[i]) row[j] = z[j + 1] - z[j];
      }
      prob.add_row(std::move(row), cb_.lower, cb_.upper);
    }
    Vec mass(nv, 0.0);
    for (std::size_t j = 0; j < cells; ++j) mass[j] = z[j + 1] - z[j];
    prob.add_equality(std::move(mass), 1.0);
    return prob;
  }

  BandValue eval_inside(std::span<const double> xi) const override {
    return eval_point(xi[0]);
  }

  /// Lower value follows the left-continuous step densities (cell to the
  /// left of xi on the increasing side, to the right on the decreasing
  /// side); the upper value follows the right-continuous ones, with the
  /// unbounded atom at the mode capped at U.
  BandValue eval_point(double xi) const {
    if (!feasible_) {
      detail::warn_once(fallback_warned_, "shape-restricted band infeasible; using (0, U)");
      return {0.0, p_.cap};
    }
    const Vec z = breakpoints(xi);
    const std::size_t cells = z.size() - 1;
    const std::size_t jx = static_cast<std::size_t>(std::lower_bound(z.begin(), z.end(), xi) - z.begin());
    const std::size_t jm =
        static_cast<std::size_t>(std::lower_bound(z.begin(), z.end(), p_.mode) - z.begin());

    BandValue out{0.0, p_.cap};
    if (xi == p_.mode) {
      // min over the polyhedron of max(beta_{jm-1}, beta_{jm}).
      lp::LpProblem prob = polyhedron(z, 1);
      const std::size_t t = cells;
      prob.objective[t] = 1.0;
      for (std::size_t j : {jm - 1, jm}) {
        if (j >= cells) continue;  // also skips jm - 1 underflow
        Vec row(cells + 1, 0.0);
        row[t] = 1.0;
        row[j] = -1.0;
        prob.add_row(std::move(row), 0.0, std::nullopt);
      }
      const auto lo = lp::solve_min(prob);
      if (lo.status != lp::LpStatus::Optimal) return fallback();
      out.lower = lo.objective;
    } else {
      const bool rising = xi < p_.mode;
      // Cell giving the lower value, and the cell giving the upper value.
      const std::ptrdiff_t lcell = rising ? static_cast<std::ptrdiff_t>(jx) - 1
                                          : (jx < cells ? static_cast<std::ptrdiff_t>(jx) : -1);
      const std::size_t ucell = rising ? jx : jx - 1;
      lp::LpProblem prob = polyhedron(z);
      if (lcell >= 0) {
        prob.objective[static_cast<std::size_t>(lcell)] = 1.0;
        const auto lo = lp::solve_min(prob);
        if (lo.status != lp::LpStatus::Optimal) return fallback();
        out.lower = lo.objective;
        prob.objective[static_cast<std::size_t>(lcell)] = 0.0;
      }
      prob.objective[ucell] = 1.0;
      const auto hi = lp::solve_max(prob);
      if (hi.status != lp::LpStatus::Optimal) return fallback();
      out.upper = hi.objective;
    }
    out.lower = std::clamp(out.lower, 0.0, p_.cap);
    out.upper = std::clamp(out.upper, out.lower, p_.cap);
    return out;
  }

 private:
  BandValue fallback() const {
    detail::warn_once(fallback_warned_, "shape-restricted band LP infeasible at a query point; using (0, U)");
    return {0.0, p_.cap};
  }

  bool check_feasible() const {
    Vec z = breakpoints(p_.mode);
    lp::LpProblem prob = polyhedron(z);
    return lp::solve_min(prob).status == lp::LpStatus::Optimal;
  }

  SrParams p_;
  Vec sorted_;
  Vec anchors_;
  CBounds cb_;
  bool feasible_ = true;
  mutable std::atomic<bool> fallback_warned_{false};
};

/// Order statistics with duplicates separated by rank * 1e-12 * (b - a).
inline Vec order_statistics(const SampleSet& data, double a, double b) {
  Vec v = data.column(0);
  std::sort(v.begin(), v.end());
  const double eps = 1e-12 * (b - a);
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] <= v[i - 1]) v[i] = std::max(v[i] + static_cast<double>(i) * eps, v[i - 1] + eps);
  }
  return v;
}

inline void validate(const SampleSet& data, const SrParams& p) {
  detail::require(data.dim() == 1, "shape-restricted band: data must be univariate");
  detail::require(p.a < p.b, "shape-restricted band: need a < b");
  detail::require(p.mode >= p.a && p.mode <= p.b, "shape-restricted band: mode outside [a, b]");
  detail::require(p.cap > 0.0, "shape-restricted band: U must be positive");
  detail::require(p.alpha > 0.0 && p.alpha < 1.0, "shape-restricted band: alpha must lie in (0, 1)");
  detail::require(p.group >= 1 && p.group < data.size(), "shape-restricted band: need 1 <= K < N");
  for (double v : data.flat())
    detail::require(v >= p.a && v <= p.b, "shape-restricted band: data point outside [a, b]");
}

/// Band from precomputed coverage constants.
inline DensityBand build_sr_band(const SampleSet& data, const SrParams& p, const CBounds& cb) {
  validate(data, p);
  auto model = std::make_shared<SrBandModel>(p, order_statistics(data, p.a, p.b), cb);
  return DensityBand(BandKind::ShapeRestricted, Box::interval(p.a, p.b), p.cap, std::move(model));
}

inline DensityBand build_sr_band(const SampleSet& data, const SrParams& p, Rng& rng) {
  validate(data, p);
  const CBounds cb = estimate_c_bounds(data.size(), p.group, p.alpha, p.mc_samples, rng);
  return build_sr_band(data, p, cb);
}

/// Piecewise envelope of a shape-restricted band tabulated on a grid that
/// contains the mode. Both l and u are monotone on each side of the mode, so
/// taking the endpoint values that bound them gives a band containing the
/// exact one, evaluable in O(log G).
class TabulatedSrModel final : public BandModel {
 public:
  TabulatedSrModel(const SrBandModel& exact, std::size_t points) : mode_(exact.params().mode) {
    detail::require(points >= 2, "tabulated band: need at least two grid points");
    const double a = exact.params().a, b = exact.params().b;
    grid_.reserve(points + 1);
    for (std::size_t i = 0; i < points; ++i)
      grid_.push_back(a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
    grid_.back() = b;
    grid_.push_back(mode_);
    std::sort(grid_.begin(), grid_.end());
    grid_.erase(std::unique(grid_.begin(), grid_.end()), grid_.end());
    lo_.resize(grid_.size());
    hi_.resize(grid_.size());
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      const BandValue v = exact.eval_point(grid_[i]);
      lo_[i] = v.lower;
      hi_[i] = v.upper;
    }
  }

  const Vec& grid() const { return grid_; }

  BandValue eval_inside(std::span<const double> xi) const override {
    const double x = xi[0];
    const auto it = std::lower_bound(grid_.begin(), grid_.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - grid_.begin());
    if (j < grid_.size() && grid_[j] == x) return {lo_[j], hi_[j]};
    // x lies strictly inside (grid_[j-1], grid_[j]), wholly on one side of the mode.
    if (grid_[j] <= mode_) return {lo_[j - 1], hi_[j]};
    return {lo_[j], hi_[j - 1]};
  }

 private:
  double mode_;
  Vec grid_, lo_, hi_;
};

/// Fast surrogate of an exact shape-restricted band; see TabulatedSrModel.
inline DensityBand tabulate_sr_band(const DensityBand& band, std::size_t points = 2001) {
  const auto* exact = band.model_as<SrBandModel>();
  detail::require(exact != nullptr, "tabulate_sr_band: not an exact shape-restricted band");
  return DensityBand(BandKind::ShapeRestricted, band.box(), band.cap(),
                     std::make_shared<TabulatedSrModel>(*exact, points));
}

struct CurveRow {
  double xi, lower, upper;
};

/// (xi, l, u) rows in grid order.
inline std::vector<CurveRow> dump_band_curve(const DensityBand& band, std::span<const double> grid) {
  std::vector<CurveRow> rows;
  rows.reserve(grid.size());
  for (double x : grid) {
    const BandValue v = band.eval(x);
    rows.push_back({x, v.lower, v.upper});
  }
  return rows;
}

inline Vec uniform_grid(double a, double b, std::size_t points) {
  detail::require(points >= 2, "uniform_grid: need at least two points");
  Vec g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1);
  g.back() = b;
  return g;
}

inline void write_band_curve_csv(std::ostream& out, const std::vector<CurveRow>& rows) {
  out << "xi,l,u\n";
  for (const auto& r : rows)
    out << format_double(r.xi) << ',' << format_double(r.lower) << ',' << format_double(r.upper) << '\n';
}

}  // namespace bandro::sr
