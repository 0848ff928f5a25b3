#pragma once

// The two case studies (newsvendor, mean-CVaR portfolio) and the synthetic
// data-generating densities used with them.

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <numbers>
#include <string>

#include "bandro/core.hpp"
#include "bandro/dro.hpp"

namespace bandro::problems {

// ---------------------------------------------------------------------------
// Newsvendor: f(x, xi) = max{c_s (xi - x), c_h (x - xi)} on X = [0, b].

struct NewsvendorSpec {
  double c_s = 19.0;
  double c_h = 1.0;
  double b = 250.0;
};

inline double newsvendor_eval(double x, double xi, const NewsvendorSpec& s) {
  return std::max(s.c_s * (xi - x), s.c_h * (x - xi));
}

/// Ties pick the shortage branch.
inline double newsvendor_subgrad(double x, double xi, const NewsvendorSpec& s) {
  return s.c_s * (xi - x) >= s.c_h * (x - xi) ? -s.c_s : s.c_h;
}

inline ProblemSpec make_newsvendor(const NewsvendorSpec& s) {
  detail::require(s.c_s > 0.0 && s.c_h > 0.0, "newsvendor: costs must be positive");
  detail::require(s.b > 0.0, "newsvendor: order bound must be positive");
  ProblemSpec p;
  p.name = "newsvendor";
  p.dim_x = 1;
  p.evaluate = [s](std::span<const double> x, std::span<const double> xi) { return newsvendor_eval(x[0], xi[0], s); };
  p.subgrad = [s](std::span<const double> x, std::span<const double> xi, std::span<double> g) {
    g[0] = newsvendor_subgrad(x[0], xi[0], s);
  };
  p.project = [b = s.b](std::span<double> x) { x[0] = std::clamp(x[0], 0.0, b); };
  return p;
}

/// Minimiser of E f(x, xi): the c_s / (c_s + c_h) quantile of the demand law.
inline double newsvendor_critical_ratio(const NewsvendorSpec& s) { return s.c_s / (s.c_s + s.c_h); }

// ---------------------------------------------------------------------------
// Portfolio: x = (w, beta), w on the simplex, beta free.
//   f = max{-w'xi + gamma beta, -(1 + gamma/eps) w'xi + gamma (1 - 1/eps) beta}

struct PortfolioSpec {
  std::size_t n = 10;
  double eps = 0.2;
  double gamma = 10.0;
};

inline double portfolio_eval(std::span<const double> x, std::span<const double> xi, const PortfolioSpec& s) {
  double wr = 0.0;
  for (std::size_t i = 0; i < s.n; ++i) wr += x[i] * xi[i];
  const double beta = x[s.n];
  const double b1 = -wr + s.gamma * beta;
  const double b2 = -(1.0 + s.gamma / s.eps) * wr + s.gamma * (1.0 - 1.0 / s.eps) * beta;
  return std::max(b1, b2);
}

/// Ties pick the second (CVaR) branch.
inline void portfolio_subgrad(std::span<const double> x, std::span<const double> xi, const PortfolioSpec& s,
                              std::span<double> g) {
  double wr = 0.0;
  for (std::size_t i = 0; i < s.n; ++i) wr += x[i] * xi[i];
  const double beta = x[s.n];
  const double b1 = -wr + s.gamma * beta;
  const double b2 = -(1.0 + s.gamma / s.eps) * wr + s.gamma * (1.0 - 1.0 / s.eps) * beta;
  const bool second = b2 >= b1;
  const double cw = second ? -(1.0 + s.gamma / s.eps) : -1.0;
  for (std::size_t i = 0; i < s.n; ++i) g[i] = cw * xi[i];
  g[s.n] = second ? s.gamma * (1.0 - 1.0 / s.eps) : s.gamma;
}

inline ProblemSpec make_portfolio(const PortfolioSpec& s) {
  detail::require(s.n >= 1, "portfolio: need at least one asset");
  detail::require(s.eps > 0.0 && s.eps < 1.0, "portfolio: eps must lie in (0, 1)");
  detail::require(s.gamma > 0.0, "portfolio: gamma must be positive");
  ProblemSpec p;
  p.name = "portfolio";
  p.dim_x = s.n + 1;
  p.evaluate = [s](std::span<const double> x, std::span<const double> xi) { return portfolio_eval(x, xi, s); };
  p.subgrad = [s](std::span<const double> x, std::span<const double> xi, std::span<double> g) {
    portfolio_subgrad(x, xi, s, g);
  };
  p.project = [n = s.n](std::span<double> x) { dro::project_simplex_inplace(x.first(n)); };
  return p;
}

// ---------------------------------------------------------------------------
// True densities.

enum class Family { TruncatedNormal, ScaledBeta, TruncatedExponential, FactorNormal };

inline const char* to_string(Family f) {
  switch (f) {
    case Family::TruncatedNormal: return "truncated_normal";
    case Family::ScaledBeta: return "scaled_beta";
    case Family::TruncatedExponential: return "truncated_exponential";
    case Family::FactorNormal: return "factor_normal";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "truncated_normal") return Family::TruncatedNormal;
  if (s == "scaled_beta") return Family::ScaledBeta;
  if (s == "truncated_exponential") return Family::TruncatedExponential;
  if (s == "factor_normal") return Family::FactorNormal;
  throw InvalidParameter("unknown density family '" + std::string(s) + "'");
}

/// Known data-generating density with sampler. Univariate families live on
/// [a, b]; the factor model is a correlated normal whose box covers +-6 sd.
class TrueDensity {
 public:
  static TrueDensity truncated_normal(double mean, double sd, double a, double b) {
    detail::require(sd > 0.0 && a < b, "truncated normal: need sd > 0 and a < b");
    TrueDensity d(Family::TruncatedNormal, Box::interval(a, b));
    d.p1_ = mean;
    d.p2_ = sd;
    const boost::math::normal_distribution<double> z;
    d.lo_cdf_ = boost::math::cdf(z, (a - mean) / sd);
    d.norm_ = boost::math::cdf(z, (b - mean) / sd) - d.lo_cdf_;
    detail::require(d.norm_ > 0.0, "truncated normal: support carries no mass");
    d.mode_ = std::clamp(mean, a, b);
    d.cap_ = d.density(d.mode_);
    return d;
  }

  static TrueDensity scaled_beta(double alpha, double beta, double a, double b) {
    detail::require(alpha >= 1.0 && beta >= 1.0 && alpha + beta > 2.0, "scaled beta: need alpha, beta >= 1, not both 1");
    detail::require(a < b, "scaled beta: need a < b");
    TrueDensity d(Family::ScaledBeta, Box::interval(a, b));
    d.p1_ = alpha;
    d.p2_ = beta;
    d.mode_ = a + (b - a) * (alpha - 1.0) / (alpha + beta - 2.0);
    d.cap_ = d.density(d.mode_);
    return d;
  }

  static TrueDensity truncated_exponential(double mean, double a, double b) {
    detail::require(mean > 0.0 && a < b, "truncated exponential: need mean > 0 and a < b");
    TrueDensity d(Family::TruncatedExponential, Box::interval(a, b));
    d.p1_ = mean;
    d.norm_ = -std::expm1(-(b - a) / mean);
    d.mode_ = a;
    d.cap_ = d.density(a);
    return d;
  }

  /// xi_i = phi + zeta_i, phi ~ N(0, factor_sd^2), zeta_i ~ N(i mean_step, (i sd_step)^2).
  static TrueDensity factor_normal(std::size_t n, double factor_sd = 0.02, double mean_step = 0.03,
                                   double sd_step = 0.025) {
    detail::require(n >= 1 && factor_sd > 0.0 && sd_step > 0.0, "factor normal: need n >= 1 and positive sds");
    Vec mean(n), sd(n), lo(n), hi(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double k = static_cast<double>(i + 1);
      mean[i] = k * mean_step;
      sd[i] = k * sd_step;
      const double total = std::sqrt(factor_sd * factor_sd + sd[i] * sd[i]);
      lo[i] = mean[i] - 6.0 * total;
      hi[i] = mean[i] + 6.0 * total;
    }
    TrueDensity d(Family::FactorNormal, Box(lo, hi));
    d.p1_ = factor_sd;
    d.mean_ = std::move(mean);
    d.sd_ = std::move(sd);
    // Sherman-Morrison pieces for Sigma = D + s^2 11'.
    double trace_inv = 0.0, logdet = 0.0;
    for (double v : d.sd_) {
      trace_inv += 1.0 / (v * v);
      logdet += 2.0 * std::log(v);
    }
    d.sm_denom_ = 1.0 + factor_sd * factor_sd * trace_inv;
    logdet += std::log(d.sm_denom_);
    d.log_norm_ = -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + logdet);
    d.mode_ = 0.0;
    d.cap_ = std::exp(d.log_norm_);
    return d;
  }

  Family family() const { return family_; }
  std::size_t dim() const { return support_.dim(); }
  const Box& support() const { return support_; }
  /// Mode (univariate families only; 0 for the factor model).
  double mode() const { return mode_; }
  /// Maximum of the density.
  double cap() const { return cap_; }

  /// Mean vector of the factor model.
  const Vec& mean() const { return mean_; }

  double density(std::span<const double> xi) const {
    if (family_ == Family::FactorNormal) return factor_density(xi);
    return density(xi[0]);
  }

  double density(double x) const {
    const double a = support_.lower()[0], b = support_.upper()[0];
    if (family_ == Family::FactorNormal) return factor_density(std::span<const double>(&x, 1));
    if (x < a || x > b) return 0.0;
    switch (family_) {
      case Family::TruncatedNormal: {
        const double z = (x - p1_) / p2_;
        return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * std::numbers::pi) * p2_ * norm_);
      }
      case Family::ScaledBeta: {
        const boost::math::beta_distribution<double> bd(p1_, p2_);
        return boost::math::pdf(bd, (x - a) / (b - a)) / (b - a);
      }
      case Family::TruncatedExponential: return std::exp(-(x - a) / p1_) / (p1_ * norm_);
      default: return 0.0;
    }
  }

  /// Quantile function of a univariate family.
  double quantile(double p) const {
    detail::require(family_ != Family::FactorNormal, "quantile: univariate families only");
    detail::require(p >= 0.0 && p <= 1.0, "quantile: p must lie in [0, 1]");
    const double a = support_.lower()[0], b = support_.upper()[0];
    switch (family_) {
      case Family::TruncatedNormal: {
        const boost::math::normal_distribution<double> z;
        const double u = std::clamp(lo_cdf_ + p * norm_, 0.0, 1.0);
        return std::clamp(p1_ + p2_ * boost::math::quantile(z, u), a, b);
      }
      case Family::ScaledBeta: {
        const boost::math::beta_distribution<double> bd(p1_, p2_);
        return a + (b - a) * boost::math::quantile(bd, p);
      }
      case Family::TruncatedExponential: return std::min(b, a - p1_ * std::log1p(-p * norm_));
      default: return 0.0;
    }
  }

  void sample(Rng& rng, std::span<double> out) const {
    switch (family_) {
      case Family::TruncatedNormal:
      case Family::TruncatedExponential: {
        // Inverse CDF on the open unit interval.
        double u = rng.uniform();
        while (u == 0.0) u = rng.uniform();
        out[0] = quantile(u);
        return;
      }
      case Family::ScaledBeta: {
        const double g1 = rng.gamma(p1_), g2 = rng.gamma(p2_);
        const double a = support_.lower()[0], b = support_.upper()[0];
        out[0] = a + (b - a) * g1 / (g1 + g2);
        return;
      }
      case Family::FactorNormal: {
        const double phi = rng.normal(0.0, p1_);
        for (std::size_t i = 0; i < mean_.size(); ++i) out[i] = phi + rng.normal(mean_[i], sd_[i]);
        return;
      }
    }
  }

  SampleSet sample_set(std::size_t n, Rng& rng) const {
    Vec flat(n * dim());
    for (std::size_t i = 0; i < n; ++i) sample(rng, std::span<double>(flat.data() + i * dim(), dim()));
    return SampleSet(dim(), std::move(flat), rng.seed());
  }

 private:
  TrueDensity(Family f, Box support) : family_(f), support_(std::move(support)) {}

  double factor_density(std::span<const double> xi) const {
    detail::require(xi.size() == mean_.size(), "factor normal: dimension mismatch");
    // r' Sigma^{-1} r = sum r_i^2/d_i^2 - s^2 (sum r_i/d_i^2)^2 / (1 + s^2 sum 1/d_i^2)
    double q = 0.0, lin = 0.0;
    for (std::size_t i = 0; i < mean_.size(); ++i) {
      const double r = xi[i] - mean_[i];
      const double inv = 1.0 / (sd_[i] * sd_[i]);
      q += r * r * inv;
      lin += r * inv;
    }
    q -= p1_ * p1_ * lin * lin / sm_denom_;
    return std::exp(log_norm_ - 0.5 * q);
  }

  Family family_;
  Box support_;
  double p1_ = 0.0, p2_ = 0.0;
  double norm_ = 1.0, lo_cdf_ = 0.0;
  double mode_ = 0.0, cap_ = 0.0;
  Vec mean_, sd_;
  double sm_denom_ = 1.0, log_norm_ = 0.0;
};

/// The newsvendor demand laws used by default.
inline TrueDensity default_density(Family f) {
  switch (f) {
    case Family::TruncatedNormal: return TrueDensity::truncated_normal(100.0, 50.0, 0.0, 250.0);
    case Family::ScaledBeta: return TrueDensity::scaled_beta(5.0, 2.0, 0.0, 250.0);
    case Family::TruncatedExponential: return TrueDensity::truncated_exponential(100.0, 0.0, 250.0);
    case Family::FactorNormal: return TrueDensity::factor_normal(10);
  }
  throw InvalidParameter("unknown family");
}

}  // namespace bandro::problems
