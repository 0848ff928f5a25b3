#pragma once

// Kernel-density confidence band: l = max{0, p_h - delta}, u = p_h + delta on
// a box, zero outside it.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "bandro/core.hpp"

namespace bandro::kde {

enum class KernelName { Boxcar, Gaussian, Epanechnikov };

inline const char* to_string(KernelName k) {
  switch (k) {
    case KernelName::Boxcar: return "boxcar";
    case KernelName::Gaussian: return "gaussian";
    case KernelName::Epanechnikov: return "epanechnikov";
  }
  return "?";
}

inline KernelName parse_kernel(std::string_view s) {
  if (s == "boxcar") return KernelName::Boxcar;
  if (s == "gaussian") return KernelName::Gaussian;
  if (s == "epanechnikov") return KernelName::Epanechnikov;
  throw InvalidParameter("unknown kernel '" + std::string(s) + "'");
}

/// Volume of the Euclidean unit ball in dimension m.
inline double unit_ball_volume(std::size_t m) {
  const double half = 0.5 * static_cast<double>(m);
  return std::pow(std::numbers::pi, half) / std::tgamma(half + 1.0);
}

/// Radial kernel K(v) = kappa(|v|_2) normalised to integrate to one in R^m.
class Kernel {
 public:
  Kernel(KernelName name, std::size_t dim) : name_(name), dim_(dim) {
    detail::require(dim >= 1, "Kernel: dimension must be >= 1");
    const double vm = unit_ball_volume(dim);
    switch (name) {
      case KernelName::Boxcar: q_ = 1.0 / vm; break;
      case KernelName::Gaussian: q_ = std::pow(2.0 * std::numbers::pi, -0.5 * static_cast<double>(dim)); break;
      case KernelName::Epanechnikov: q_ = (static_cast<double>(dim) + 2.0) / (2.0 * vm); break;
    }
  }

  KernelName name() const { return name_; }
  std::size_t dim() const { return dim_; }

  double kappa(double t) const {
    switch (name_) {
      case KernelName::Boxcar: return t <= 1.0 ? q_ : 0.0;
      case KernelName::Gaussian: return q_ * std::exp(-0.5 * t * t);
      case KernelName::Epanechnikov: return t <= 1.0 ? q_ * (1.0 - t * t) : 0.0;
    }
    return 0.0;
  }

  /// Profile expressed on squared radius; avoids a square root per point.
  double kappa_sq(double t2) const {
    switch (name_) {
      case KernelName::Boxcar: return t2 <= 1.0 ? q_ : 0.0;
      case KernelName::Gaussian: return q_ * std::exp(-0.5 * t2);
      case KernelName::Epanechnikov: return t2 <= 1.0 ? q_ * (1.0 - t2) : 0.0;
    }
    return 0.0;
  }

  /// Radius of the support, infinite for the Gaussian.
  double support_radius() const { return name_ == KernelName::Gaussian ? INFINITY : 1.0; }

  /// A random vector with density K.
  void sample(Rng& rng, std::span<double> out) const {
    if (name_ == KernelName::Gaussian) {
      for (double& v : out) v = rng.normal();
      return;
    }
    while (true) {
      double norm2 = 0.0;
      for (double& v : out) {
        v = rng.normal();
        norm2 += v * v;
      }
      const double r = std::pow(rng.uniform(), 1.0 / static_cast<double>(dim_));
      const double scale = r / std::sqrt(norm2);
      for (double& v : out) v *= scale;
      if (name_ == KernelName::Boxcar || rng.uniform() <= 1.0 - r * r) return;
    }
  }

 private:
  KernelName name_;
  std::size_t dim_;
  double q_ = 1.0;
};

inline double simpson_refine(const std::function<double(double)>& f, double a, double fa, double m,
                           double fm, double b, double fb, double whole, double tol, int depth) {
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) return left + right + diff / 15.0;
  return simpson_refine(f, a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1) +
         simpson_refine(f, m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1);
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
inline double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                               double tol = 1e-10, int max_depth = 48) {
  // Start from a few panels so narrow features are not missed on the first pass.
  const int panels = 16;
  double total = 0.0;
  for (int i = 0; i < panels; ++i) {
    const double lo = a + (b - a) * i / panels, hi = a + (b - a) * (i + 1) / panels;
    const double mid = 0.5 * (lo + hi);
    const double flo = f(lo), fmid = f(mid), fhi = f(hi);
    const double whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    total += simpson_refine(f, lo, flo, mid, fmid, hi, fhi, whole, tol / panels, max_depth);
  }
  return total;
}

/// Radial moment integral of kappa(t) t^s over [0, inf).
inline double kernel_moment(const Kernel& k, double s) {
  detail::require(s > -1.0, "kernel_moment: need s > -1");
  if (k.name() == KernelName::Boxcar) return k.kappa(0.0) / (s + 1.0);
  double upper = 1.0;
  if (k.name() == KernelName::Gaussian) {
    // Tail exp(-t^2/2): the integrand t^s exp(-t^2/2) peaks at sqrt(s).
    upper = std::max(std::sqrt(80.0), std::sqrt(std::max(s, 0.0)) + 12.0);
  }
  return adaptive_simpson([&](double t) { return k.kappa(t) * std::pow(t, s); }, 0.0, upper, 1e-10);
}

struct DeltaConstants {
  double c1 = 0.0;
  double c2 = 0.0;
};

/// C1 = V_m C int kappa t^{m+rho}, C2 = 8 m sqrt(V_m U)(int kappa t^{m/2} + 1) + 64 m^2 kappa(0).
inline DeltaConstants delta_constants(double holder_c, double rho, double cap, const Kernel& k) {
  detail::require(holder_c > 0.0 && cap > 0.0, "delta_constants: C and U must be positive");
  detail::require(rho > 0.0 && rho <= 1.0, "delta_constants: rho must lie in (0, 1]");
  const double m = static_cast<double>(k.dim());
  const double vm = unit_ball_volume(k.dim());
  DeltaConstants d;
  d.c1 = vm * holder_c * kernel_moment(k, m + rho);
  d.c2 = 8.0 * m * std::sqrt(vm * cap) * (kernel_moment(k, 0.5 * m) + 1.0) + 64.0 * m * m * k.kappa(0.0);
  return d;
}

/// Smallest admissible bandwidth (exclusive) for the theoretical width.
inline double min_theoretical_bandwidth(std::size_t n, double alpha, std::size_t m) {
  const double nn = static_cast<double>(n);
  return std::pow(std::log(nn / alpha) / nn, 1.0 / static_cast<double>(m));
}

/// delta = C1 h^rho + C2 sqrt(log(N/alpha) / (N h^m)).
inline double delta_theoretical(double holder_c, double rho, double cap, const Kernel& k, std::size_t n,
                                double alpha, double h) {
  detail::require(n >= 1, "delta_theoretical: need N >= 1");
  detail::require(alpha > 0.0 && alpha < 1.0, "delta_theoretical: alpha must lie in (0, 1)");
  detail::require(h > min_theoretical_bandwidth(n, alpha, k.dim()),
                  "delta_theoretical: bandwidth below (log(N/alpha)/N)^{1/m}");
  const DeltaConstants d = delta_constants(holder_c, rho, cap, k);
  const double nn = static_cast<double>(n);
  return d.c1 * std::pow(h, rho) +
         d.c2 * std::sqrt(std::log(nn / alpha) / (nn * std::pow(h, static_cast<double>(k.dim()))));
}

/// p_h(xi) = (1/N) sum h^{-m} kappa(|xi - xi_i| / h).
inline double kde_eval(const SampleSet& data, const Kernel& k, double h, std::span<const double> xi) {
  detail::require(h > 0.0, "kde_eval: bandwidth must be positive");
  detail::require(xi.size() == data.dim() && k.dim() == data.dim(), "kde_eval: dimension mismatch");
  const std::size_t m = data.dim();
  const double inv_h2 = 1.0 / (h * h);
  const auto flat = data.flat();
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = xi[j] - flat[i * m + j];
      d2 += d * d;
    }
    s += k.kappa_sq(d2 * inv_h2);
  }
  return s / (static_cast<double>(data.size()) * std::pow(h, static_cast<double>(m)));
}

inline double kde_eval(const SampleSet& data, const Kernel& k, double h, double xi) {
  return kde_eval(data, k, h, std::span<const double>(&xi, 1));
}

class KdeBandModel final : public BandModel {
 public:
  KdeBandModel(SampleSet data, Kernel kernel, double h, double delta)
      : data_(std::move(data)), kernel_(kernel), h_(h), delta_(delta) {}

  const SampleSet& data() const { return data_; }
  const Kernel& kernel() const { return kernel_; }
  double bandwidth() const { return h_; }
  double delta() const { return delta_; }

  double estimate(std::span<const double> xi) const { return kde_eval(data_, kernel_, h_, xi); }

  BandValue eval_inside(std::span<const double> xi) const override {
    const double p = estimate(xi);
    return {std::max(0.0, p - delta_), p + delta_};
  }

  /// Draw from p_h: a data point plus h times a kernel draw.
  void sample(Rng& rng, std::span<double> out) const {
    const auto centre = data_.point(rng.index(data_.size()));
    kernel_.sample(rng, out);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = centre[j] + h_ * out[j];
  }

 private:
  SampleSet data_;
  Kernel kernel_;
  double h_;
  double delta_;
};

struct KdeParams {
  KernelName kernel = KernelName::Boxcar;
  double h = 1.0;
  double delta = 0.0;
  std::optional<Box> box;  // defaults to the data bounding box grown by 3h
};

inline DensityBand build_kde_band(const SampleSet& data, const KdeParams& p) {
  detail::require(p.h > 0.0 && std::isfinite(p.h), "kde band: bandwidth must be positive");
  detail::require(p.delta >= 0.0 && std::isfinite(p.delta), "kde band: delta must be nonnegative");
  Box box = p.box ? *p.box : Box::bounding(data, 3.0 * p.h);
  detail::require(box.dim() == data.dim(), "kde band: box dimension does not match data");
  for (std::size_t i = 0; i < data.size(); ++i)
    detail::require(box.contains(data.point(i)), "kde band: data point outside the band box");
  const Kernel k(p.kernel, data.dim());
  const double cap = k.kappa(0.0) / std::pow(p.h, static_cast<double>(data.dim())) + p.delta;
  return DensityBand(BandKind::KDE, std::move(box), cap, std::make_shared<KdeBandModel>(data, k, p.h, p.delta));
}

/// Bandwidth grid rule h = c (log N / N)^{1/(2 + m)}.
inline double grid_bandwidth(double c, std::size_t n, std::size_t m) {
  const double nn = static_cast<double>(n);
  return c * std::pow(std::log(nn) / nn, 1.0 / (2.0 + static_cast<double>(m)));
}

/// Bandwidth h = (log(N/alpha)/N)^{1/(2 rho + m)} balancing the two width terms.
inline double balanced_bandwidth(std::size_t n, double alpha, double rho, std::size_t m) {
  const double nn = static_cast<double>(n);
  return std::pow(std::log(nn / alpha) / nn, 1.0 / (2.0 * rho + static_cast<double>(m)));
}

/// 2-D band on the tensor grid xs x ys, header "xi1,xi2,l,u", xs varying slowest.
inline void write_band_grid_csv(std::ostream& out, const DensityBand& band, std::span<const double> xs,
                                std::span<const double> ys) {
  detail::require(band.dim() == 2, "band grid: band must be two-dimensional");
  out << "xi1,xi2,l,u\n";
  for (double x : xs) {
    for (double y : ys) {
      const double pt[2] = {x, y};
      const BandValue v = band.eval(pt);
      out << format_double(x) << ',' << format_double(y) << ',' << format_double(v.lower) << ','
          << format_double(v.upper) << '\n';
    }
  }
}

}  // namespace bandro::kde
