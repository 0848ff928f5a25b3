#pragma once

// Dense two-phase bounded-variable primal simplex for the small LPs behind
// the shape-restricted band and the finite oracle problems.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "bandro/core.hpp"

namespace bandro::lp {

/// Missing bound means unbounded in that direction.
using Bound = std::optional<double>;

struct Row {
  Vec coef;
  Bound lower;
  Bound upper;
};

/// min/max c.x  s.t.  row.lower <= row.coef.x <= row.upper,  var_lower <= x <= var_upper.
/// Variables default to [0, +inf).
struct LpProblem {
  std::size_t n_vars = 0;
  Vec objective;
  std::vector<Row> rows;
  std::vector<Bound> var_lower;
  std::vector<Bound> var_upper;

  LpProblem() = default;
  explicit LpProblem(std::size_t n)
      : n_vars(n), objective(n, 0.0), var_lower(n, Bound(0.0)), var_upper(n, Bound()) {}

  void set_bounds(std::size_t j, Bound lo, Bound hi) {
    var_lower[j] = lo;
    var_upper[j] = hi;
  }
  void add_row(Vec coef, Bound lo, Bound hi) { rows.push_back({std::move(coef), lo, hi}); }
  void add_equality(Vec coef, double rhs) { add_row(std::move(coef), rhs, rhs); }
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "optimal";
    case LpStatus::Infeasible: return "infeasible";
    case LpStatus::Unbounded: return "unbounded";
  }
  return "?";
}

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  Vec x;
  double objective = 0.0;
  std::size_t iterations = 0;
};

inline constexpr double kFeasibilityTol = 1e-8;
inline constexpr double kOptimalityTol = 1e-9;

namespace detail {

inline constexpr double kPivotTol = 1e-11;
inline constexpr double kInf = INFINITY;

// How an original variable maps onto the nonnegative working columns.
struct VarMap {
  std::size_t col = 0;
  double sign = 1.0;
  double offset = 0.0;
  std::ptrdiff_t neg_col = -1;  // free variables: x = y[col] - y[neg_col]
};

class Simplex {
 public:
  Simplex(const LpProblem& p, std::size_t cap) : cap_(cap) { build(p); }

  LpSolution run(const LpProblem& p) {
    LpSolution sol;
    // Phase 1: minimise the sum of artificials.
    cost_.assign(ncols_, 0.0);
    for (std::size_t j = art0_; j < ncols_; ++j) cost_[j] = 1.0;
    if (iterate() == Outcome::Capped) throw_cap();
    double infeas = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      if (head_[i] >= art0_) infeas += xb_[i];
    }
    double bnorm = 0.0;
    for (double v : b_) bnorm = std::max(bnorm, std::abs(v));
    sol.iterations = iters_;
    if (infeas > kFeasibilityTol * (1.0 + bnorm)) {
      sol.status = LpStatus::Infeasible;
      return sol;
    }

    // Phase 2: artificials are pinned at zero.
    for (std::size_t j = art0_; j < ncols_; ++j) ub_[j] = 0.0;
    drive_out_artificials();
    cost_ = phase2_cost_;
    bland_ = false;
    degenerate_ = 0;
    const Outcome out = iterate();
    if (out == Outcome::Capped) throw_cap();
    sol.iterations = iters_;
    if (out == Outcome::Unbounded) {
      sol.status = LpStatus::Unbounded;
      return sol;
    }

    Vec y = values();
    sol.status = LpStatus::Optimal;
    sol.x.assign(p.n_vars, 0.0);
    for (std::size_t j = 0; j < p.n_vars; ++j) {
      const VarMap& vm = map_[j];
      double v = vm.offset + vm.sign * y[vm.col];
      if (vm.neg_col >= 0) v -= y[static_cast<std::size_t>(vm.neg_col)];
      if (p.var_lower[j]) v = std::max(v, *p.var_lower[j]);
      if (p.var_upper[j]) v = std::min(v, *p.var_upper[j]);
      sol.x[j] = v;
    }
    sol.objective = 0.0;
    for (std::size_t j = 0; j < p.n_vars; ++j) sol.objective += p.objective[j] * sol.x[j];
    return sol;
  }

 private:
  enum class Outcome { Optimal, Unbounded, Capped };

  void build(const LpProblem& p) {
    const std::size_t n = p.n_vars;
    map_.resize(n);
    std::size_t cols = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const Bound lo = p.var_lower[j], hi = p.var_upper[j];
      if (lo && hi && *lo > *hi) throw InvalidParameter("LpProblem: variable lower bound exceeds upper");
      VarMap vm;
      vm.col = cols++;
      if (lo) {
        vm.offset = *lo;
        col_ub_.push_back(hi ? *hi - *lo : kInf);
      } else if (hi) {
        vm.sign = -1.0;
        vm.offset = *hi;
        col_ub_.push_back(kInf);
      } else {
        col_ub_.push_back(kInf);
        vm.neg_col = static_cast<std::ptrdiff_t>(cols++);
        col_ub_.push_back(kInf);
      }
      map_[j] = vm;
    }
    nstruct_ = cols;

    // Rows in working coordinates, one slack per ranged or one-sided row.
    struct WorkRow {
      Vec a;
      double rhs;
      std::ptrdiff_t slack = -1;
      double slack_sign = 0.0;
    };
    std::vector<WorkRow> work;
    std::vector<double> slack_ub;
    for (const Row& r : p.rows) {
      if (r.coef.size() != n) throw InvalidParameter("LpProblem: row length differs from n_vars");
      if (r.lower && r.upper && *r.lower > *r.upper)
        throw InvalidParameter("LpProblem: row lower bound exceeds upper");
      if (!r.lower && !r.upper) continue;
      WorkRow w;
      w.a.assign(nstruct_, 0.0);
      double shift = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const VarMap& vm = map_[j];
        w.a[vm.col] += r.coef[j] * vm.sign;
        if (vm.neg_col >= 0) w.a[static_cast<std::size_t>(vm.neg_col)] -= r.coef[j];
        shift += r.coef[j] * vm.offset;
      }
      if (r.lower && r.upper && *r.lower == *r.upper) {
        w.rhs = *r.lower - shift;
      } else if (r.lower) {
        w.rhs = *r.lower - shift;
        w.slack = static_cast<std::ptrdiff_t>(slack_ub.size());
        w.slack_sign = -1.0;
        slack_ub.push_back(r.upper ? *r.upper - *r.lower : kInf);
      } else {
        w.rhs = *r.upper - shift;
        w.slack = static_cast<std::ptrdiff_t>(slack_ub.size());
        w.slack_sign = 1.0;
        slack_ub.push_back(kInf);
      }
      work.push_back(std::move(w));
    }

    m_ = work.size();
    const std::size_t nslack = slack_ub.size();
    art0_ = nstruct_ + nslack;
    ncols_ = art0_ + m_;
    ub_ = col_ub_;
    ub_.insert(ub_.end(), slack_ub.begin(), slack_ub.end());
    ub_.resize(ncols_, kInf);

    tab_.assign(m_ * ncols_, 0.0);
    b_.assign(m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      WorkRow& w = work[i];
      const double flip = w.rhs < 0.0 ? -1.0 : 1.0;
      for (std::size_t j = 0; j < nstruct_; ++j) at(i, j) = flip * w.a[j];
      if (w.slack >= 0) at(i, nstruct_ + static_cast<std::size_t>(w.slack)) = flip * w.slack_sign;
      at(i, art0_ + i) = 1.0;
      b_[i] = flip * w.rhs;
    }
    // The artificial block starts as the identity, so it tracks B^{-1}.
    binv_.assign(m_ * m_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) binv_[i * m_ + i] = 1.0;
    orig_ = tab_;

    head_.resize(m_);
    for (std::size_t i = 0; i < m_; ++i) head_[i] = art0_ + i;
    at_upper_.assign(ncols_, false);
    is_basic_.assign(ncols_, false);
    for (std::size_t i = 0; i < m_; ++i) is_basic_[head_[i]] = true;
    xb_ = b_;

    phase2_cost_.assign(ncols_, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const VarMap& vm = map_[j];
      phase2_cost_[vm.col] += p.objective[j] * vm.sign;
      if (vm.neg_col >= 0) phase2_cost_[static_cast<std::size_t>(vm.neg_col)] -= p.objective[j];
    }
  }

  double& at(std::size_t i, std::size_t j) { return tab_[i * ncols_ + j]; }
  double at(std::size_t i, std::size_t j) const { return tab_[i * ncols_ + j]; }

  double nonbasic_value(std::size_t j) const { return at_upper_[j] ? ub_[j] : 0.0; }

  // xb = B^{-1} (b - N x_N), from the original columns.
  void recompute_basics() {
    Vec r = b_;
    for (std::size_t j = 0; j < ncols_; ++j) {
      if (is_basic_[j] || !at_upper_[j]) continue;
      const double v = ub_[j];
      for (std::size_t i = 0; i < m_; ++i) r[i] -= orig_[i * ncols_ + j] * v;
    }
    for (std::size_t i = 0; i < m_; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < m_; ++k) s += binv_[i * m_ + k] * r[k];
      xb_[i] = s;
    }
  }

  void pivot(std::size_t r, std::size_t q) {
    const double piv = at(r, q);
    for (std::size_t j = 0; j < ncols_; ++j) at(r, j) /= piv;
    for (std::size_t k = 0; k < m_; ++k) binv_[r * m_ + k] /= piv;
    for (std::size_t i = 0; i < m_; ++i) {
      if (i == r) continue;
      const double f = at(i, q);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < ncols_; ++j) at(i, j) -= f * at(r, j);
      for (std::size_t k = 0; k < m_; ++k) binv_[i * m_ + k] -= f * binv_[r * m_ + k];
      at(i, q) = 0.0;
    }
    at(r, q) = 1.0;
    is_basic_[head_[r]] = false;
    is_basic_[q] = true;
    head_[r] = q;
    at_upper_[q] = false;
  }

  Outcome iterate() {
    Vec d(ncols_);
    while (true) {
      if (iters_ >= cap_) return Outcome::Capped;
      // Reduced costs.
      for (std::size_t j = 0; j < ncols_; ++j) {
        if (is_basic_[j]) {
          d[j] = 0.0;
          continue;
        }
        double z = 0.0;
        for (std::size_t i = 0; i < m_; ++i) z += cost_[head_[i]] * at(i, j);
        d[j] = cost_[j] - z;
      }
      std::ptrdiff_t q = -1;
      double best = 0.0;
      for (std::size_t j = 0; j < ncols_; ++j) {
        if (is_basic_[j] || ub_[j] <= 0.0) continue;
        double gain = 0.0;
        if (!at_upper_[j] && d[j] < -kOptimalityTol) gain = -d[j];
        else if (at_upper_[j] && d[j] > kOptimalityTol) gain = d[j];
        if (gain <= 0.0) continue;
        if (bland_) {
          q = static_cast<std::ptrdiff_t>(j);
          break;
        }
        if (gain > best) {
          best = gain;
          q = static_cast<std::ptrdiff_t>(j);
        }
      }
      if (q < 0) return Outcome::Optimal;
      const std::size_t qj = static_cast<std::size_t>(q);
      const double dir = at_upper_[qj] ? -1.0 : 1.0;

      // Ratio test; every working column has lower bound 0.
      double theta = ub_[qj];
      std::ptrdiff_t leave = -1;
      bool leave_to_upper = false;
      double leave_alpha = 0.0;
      for (std::size_t i = 0; i < m_; ++i) {
        const double alpha = dir * at(i, qj);
        double lim;
        bool to_upper;
        if (alpha > kPivotTol) {
          lim = std::max(xb_[i], 0.0) / alpha;
          to_upper = false;
        } else if (alpha < -kPivotTol && std::isfinite(ub_[head_[i]])) {
          lim = std::max(ub_[head_[i]] - xb_[i], 0.0) / (-alpha);
          to_upper = true;
        } else {
          continue;
        }
        bool take = false;
        if (lim < theta - 1e-12) {
          take = true;
        } else if (lim <= theta + 1e-12 && leave >= 0) {
          if (bland_) take = head_[i] < head_[static_cast<std::size_t>(leave)];
          else take = std::abs(alpha) > std::abs(leave_alpha);
        } else if (lim <= theta + 1e-12 && leave < 0 && !std::isfinite(theta)) {
          take = true;
        }
        if (take) {
          theta = lim;
          leave = static_cast<std::ptrdiff_t>(i);
          leave_to_upper = to_upper;
          leave_alpha = alpha;
        }
      }
      if (!std::isfinite(theta)) return Outcome::Unbounded;
      ++iters_;

      if (theta <= 1e-12) {
        if (++degenerate_ > 10 * ncols_) bland_ = true;
      }

      if (leave < 0) {
        // Bound flip of the entering column.
        at_upper_[qj] = !at_upper_[qj];
        recompute_basics();
        continue;
      }
      const std::size_t r = static_cast<std::size_t>(leave);
      const std::size_t out = head_[r];
      pivot(r, qj);
      at_upper_[out] = leave_to_upper;
      recompute_basics();
    }
  }

  void drive_out_artificials() {
    for (std::size_t r = 0; r < m_; ++r) {
      if (head_[r] < art0_) continue;
      std::ptrdiff_t best = -1;
      double mag = 1e-9;
      for (std::size_t j = 0; j < art0_; ++j) {
        if (is_basic_[j]) continue;
        if (std::abs(at(r, j)) > mag) {
          mag = std::abs(at(r, j));
          best = static_cast<std::ptrdiff_t>(j);
        }
      }
      if (best < 0) continue;  // redundant row
      // Degenerate exchange: the artificial sits at zero, so the basic
      // solution is unchanged when it leaves.
      const std::size_t out = head_[r];
      pivot(r, static_cast<std::size_t>(best));
      at_upper_[out] = false;
      recompute_basics();
    }
  }

  Vec values() const {
    Vec y(ncols_, 0.0);
    for (std::size_t j = 0; j < ncols_; ++j) {
      if (!is_basic_[j]) y[j] = nonbasic_value(j);
    }
    for (std::size_t i = 0; i < m_; ++i) {
      const std::size_t j = head_[i];
      y[j] = std::clamp(xb_[i], 0.0, std::isfinite(ub_[j]) ? ub_[j] : INFINITY);
    }
    return y;
  }

  [[noreturn]] void throw_cap() const {
    throw NumericalFailure("simplex exceeded its iteration cap (" + std::to_string(cap_) + ")");
  }

  std::size_t cap_;
  std::size_t m_ = 0, ncols_ = 0, nstruct_ = 0, art0_ = 0;
  std::vector<VarMap> map_;
  Vec col_ub_, ub_, tab_, orig_, binv_, b_, xb_, cost_, phase2_cost_;
  std::vector<std::size_t> head_;
  std::vector<bool> at_upper_, is_basic_;
  std::size_t iters_ = 0;
  std::size_t degenerate_ = 0;
  bool bland_ = false;
};

}  // namespace detail

/// Minimise c.x. Deterministic: Dantzig pricing with a permanent switch to
/// Bland's rule after 10 * columns degenerate pivots. Throws NumericalFailure
/// past 50 * (n_vars + n_rows) pivots.
inline LpSolution solve_min(const LpProblem& prob) {
  if (prob.n_vars == 0) throw InvalidParameter("LpProblem: need at least one variable");
  if (prob.objective.size() != prob.n_vars || prob.var_lower.size() != prob.n_vars ||
      prob.var_upper.size() != prob.n_vars) {
    throw InvalidParameter("LpProblem: objective/bounds length differs from n_vars");
  }
  const std::size_t cap = 50 * (prob.n_vars + prob.rows.size());
  detail::Simplex s(prob, cap);
  return s.run(prob);
}

inline LpSolution solve_max(const LpProblem& prob) {
  LpProblem neg = prob;
  for (double& c : neg.objective) c = -c;
  LpSolution sol = solve_min(neg);
  if (sol.status == LpStatus::Optimal) {
    sol.objective = 0.0;
    for (std::size_t j = 0; j < prob.n_vars; ++j) sol.objective += prob.objective[j] * sol.x[j];
  }
  return sol;
}

/// Largest bound violation of x, scaled by 1 + |bound|.
inline double max_violation(const LpProblem& prob, std::span<const double> x) {
  double worst = 0.0;
  auto check = [&](double v, const Bound& lo, const Bound& hi) {
    if (lo) worst = std::max(worst, (*lo - v) / (1.0 + std::abs(*lo)));
    if (hi) worst = std::max(worst, (v - *hi) / (1.0 + std::abs(*hi)));
  };
  for (std::size_t j = 0; j < prob.n_vars; ++j) check(x[j], prob.var_lower[j], prob.var_upper[j]);
  for (const Row& r : prob.rows) {
    double v = 0.0;
    for (std::size_t j = 0; j < prob.n_vars; ++j) v += r.coef[j] * x[j];
    check(v, r.lower, r.upper);
  }
  return worst;
}

}  // namespace bandro::lp
