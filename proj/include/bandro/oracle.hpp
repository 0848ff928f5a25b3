#pragma once

// Brute-force inner supremum over a discretised band:
//   max sum f_c p_c w_c  s.t.  l_c <= p_c <= u_c,  sum p_c w_c = 1,
// solved by water-filling and, independently, by the LP solver.

#include <algorithm>
#include <numeric>
#include <vector>

#include "bandro/core.hpp"
#include "bandro/lp.hpp"

namespace bandro::oracle {

/// Quadrature slack on the unit-mass condition.
inline constexpr double kMassSlack = 1e-6;

struct GridCell {
  Vec centre;
  double width;  // cell volume
  double lower, upper;
};

struct GridBand {
  std::vector<GridCell> cells;

  std::size_t size() const { return cells.size(); }
  double lower_mass() const {
    double s = 0.0;
    for (const auto& c : cells) s += c.lower * c.width;
    return s;
  }
  double upper_mass() const {
    double s = 0.0;
    for (const auto& c : cells) s += c.upper * c.width;
    return s;
  }
  /// Whether some density fits between l and u at this resolution.
  bool feasible() const { return lower_mass() <= 1.0 + kMassSlack && upper_mass() >= 1.0 - kMassSlack; }
};

/// Midpoint discretisation with G cells per axis (G in 1-D, G x G in 2-D).
inline GridBand discretize(const DensityBand& band, std::size_t g) {
  detail::require(g >= 10, "discretize: need G >= 10");
  detail::require(band.dim() == 1 || band.dim() == 2, "discretize: only 1-D and 2-D bands");
  const Box& box = band.box();
  GridBand gb;
  const double w0 = box.width(0) / static_cast<double>(g);
  auto at = [&](std::size_t axis, std::size_t i, double w) {
    return box.lower()[axis] + (static_cast<double>(i) + 0.5) * w;
  };
  if (band.dim() == 1) {
    gb.cells.reserve(g);
    for (std::size_t i = 0; i < g; ++i) {
      Vec c{at(0, i, w0)};
      const BandValue v = band.eval(c);
      gb.cells.push_back({std::move(c), w0, v.lower, v.upper});
    }
    return gb;
  }
  const double w1 = box.width(1) / static_cast<double>(g);
  gb.cells.reserve(g * g);
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = 0; j < g; ++j) {
      Vec c{at(0, i, w0), at(1, j, w1)};
      const BandValue v = band.eval(c);
      gb.cells.push_back({std::move(c), w0 * w1, v.lower, v.upper});
    }
  }
  return gb;
}

struct InnerSup {
  double value = 0.0;
  Vec density;  // worst-case p per cell
};

inline void require_feasible(const GridBand& gb) {
  if (!gb.feasible())
    throw InvalidParameter("inner_sup: band cannot hold a density (sum l w = " + format_double(gb.lower_mass()) +
                           ", sum u w = " + format_double(gb.upper_mass()) + ")");
}

/// Water-filling: start at l, pour the remaining mass into the cells with the
/// largest f first; equal f fills the lower index first.
inline InnerSup inner_sup(const GridBand& gb, std::span<const double> fvals) {
  detail::require(fvals.size() == gb.size(), "inner_sup: one f value per cell required");
  require_feasible(gb);
  InnerSup out;
  out.density.resize(gb.size());
  double remaining = 1.0;
  for (std::size_t c = 0; c < gb.size(); ++c) {
    out.density[c] = gb.cells[c].lower;
    remaining -= gb.cells[c].lower * gb.cells[c].width;
  }
  std::vector<std::size_t> order(gb.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fvals[a] > fvals[b]; });
  for (std::size_t c : order) {
    if (remaining <= 0.0) break;
    const auto& cell = gb.cells[c];
    const double add = std::min(cell.upper - cell.lower, remaining / cell.width);
    out.density[c] += add;
    remaining -= add * cell.width;
  }
  for (std::size_t c = 0; c < gb.size(); ++c) out.value += fvals[c] * out.density[c] * gb.cells[c].width;
  return out;
}

/// Same problem through the general LP solver.
inline InnerSup inner_sup_lp(const GridBand& gb, std::span<const double> fvals) {
  detail::require(fvals.size() == gb.size(), "inner_sup_lp: one f value per cell required");
  require_feasible(gb);
  lp::LpProblem prob(gb.size());
  Vec mass(gb.size());
  for (std::size_t c = 0; c < gb.size(); ++c) {
    prob.objective[c] = fvals[c] * gb.cells[c].width;
    prob.set_bounds(c, gb.cells[c].lower, gb.cells[c].upper);
    mass[c] = gb.cells[c].width;
  }
  prob.add_equality(std::move(mass), 1.0);
  const lp::LpSolution s = lp::solve_max(prob);
  if (s.status != lp::LpStatus::Optimal)
    throw NumericalFailure(std::string("inner_sup_lp: LP ended ") + lp::to_string(s.status));
  return {s.objective, s.x};
}

inline Vec cell_values(const ProblemSpec& prob, std::span<const double> x, const GridBand& gb) {
  Vec f(gb.size());
  for (std::size_t c = 0; c < gb.size(); ++c) f[c] = prob.evaluate(x, gb.cells[c].centre);
  return f;
}

/// Reference worst-case expected cost v(x) at resolution G.
inline double robust_value_oracle(const ProblemSpec& prob, const DensityBand& band, std::span<const double> x,
                                  std::size_t g) {
  const GridBand gb = discretize(band, g);
  return inner_sup(gb, cell_values(prob, x, gb)).value;
}

}  // namespace bandro::oracle
