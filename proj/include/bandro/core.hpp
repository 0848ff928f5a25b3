#pragma once

// Shared domain types: samples, boxes, density bands, problem specs and the
// seeded random-number contract used by every other header.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace bandro {

using Vec = std::vector<double>;

/// Raised when an operation is called outside its documented domain.
struct InvalidParameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine cannot produce a trustworthy answer.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidParameter(what);
}

inline std::atomic<bool> g_quiet_warnings{false};

inline void warn_once(std::atomic<bool>& flag, const char* msg) {
  if (!flag.exchange(true) && !g_quiet_warnings.load()) std::cerr << "bandro: warning: " << msg << "\n";
}

}  // namespace detail

/// Silences one-shot numerical warnings (batch experiments and tests).
inline void set_quiet_warnings(bool quiet) { detail::g_quiet_warnings = quiet; }

// ---------------------------------------------------------------------------
// Rng

/// Seeded random stream. Identical (seed, stream) pairs reproduce identical
/// draw sequences; child streams come from derive_stream, never from copying
/// a stream that is already in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::mt19937_64& engine() { return engine_; }

  /// Uniform on [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(engine_);
  }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(engine_); }
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

/// Deterministic child stream identified by `label`; depends only on the
/// parent's (seed, stream) and never on how many draws the parent has made.
inline Rng derive_stream(const Rng& parent, std::string_view label) {
  const std::uint64_t child =
      detail::splitmix64(parent.stream() ^ detail::splitmix64(detail::fnv1a(label)));
  return Rng(parent.seed(), child);
}

// ---------------------------------------------------------------------------
// SampleSet

/// N observations of dimension m stored row-major in insertion order.
class SampleSet {
 public:
  SampleSet() = default;

  SampleSet(std::size_t dim, Vec flat, std::uint64_t seed = 0)
      : dim_(dim), flat_(std::move(flat)), seed_(seed) {
    detail::require(dim_ >= 1, "SampleSet: dimension must be >= 1");
    detail::require(!flat_.empty() && flat_.size() % dim_ == 0,
                    "SampleSet: need N >= 1 points with exactly m coordinates");
    for (double v : flat_) detail::require(std::isfinite(v), "SampleSet: non-finite coordinate");
  }

  static SampleSet from_points(const std::vector<Vec>& pts, std::uint64_t seed = 0) {
    detail::require(!pts.empty(), "SampleSet: need at least one point");
    const std::size_t m = pts.front().size();
    Vec flat;
    flat.reserve(pts.size() * m);
    for (const auto& p : pts) {
      detail::require(p.size() == m, "SampleSet: ragged points");
      flat.insert(flat.end(), p.begin(), p.end());
    }
    return SampleSet(m, std::move(flat), seed);
  }

  static SampleSet univariate(Vec values, std::uint64_t seed = 0) {
    return SampleSet(1, std::move(values), seed);
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : flat_.size() / dim_; }
  std::uint64_t seed() const { return seed_; }
  std::span<const double> point(std::size_t i) const { return {flat_.data() + i * dim_, dim_}; }
  std::span<const double> flat() const { return flat_; }

  /// Coordinate 0 of every point (the whole dataset when m = 1).
  Vec column(std::size_t j = 0) const {
    Vec out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = flat_[i * dim_ + j];
    return out;
  }

  SampleSet subset(std::span<const std::size_t> idx) const {
    Vec flat;
    flat.reserve(idx.size() * dim_);
    for (std::size_t i : idx) {
      auto p = point(i);
      flat.insert(flat.end(), p.begin(), p.end());
    }
    return SampleSet(dim_, std::move(flat), seed_);
  }

 private:
  std::size_t dim_ = 0;
  Vec flat_;
  std::uint64_t seed_ = 0;
};

// ---------------------------------------------------------------------------
// Box

class Box {
 public:
  Box() = default;
  Box(Vec lower, Vec upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    detail::require(!lower_.empty() && lower_.size() == upper_.size(), "Box: dimension mismatch");
    for (std::size_t i = 0; i < lower_.size(); ++i) {
      detail::require(std::isfinite(lower_[i]) && std::isfinite(upper_[i]) && lower_[i] < upper_[i],
                      "Box: need finite lower < upper in every coordinate");
    }
    detail::require(std::isfinite(volume()) && volume() > 0.0, "Box: volume must be finite and positive");
  }

  static Box interval(double a, double b) { return Box({a}, {b}); }

  std::size_t dim() const { return lower_.size(); }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  double width(std::size_t i) const { return upper_[i] - lower_[i]; }

  double volume() const {
    double v = 1.0;
    for (std::size_t i = 0; i < lower_.size(); ++i) v *= upper_[i] - lower_[i];
    return v;
  }

  bool contains(std::span<const double> xi) const {
    if (xi.size() != lower_.size()) return false;
    for (std::size_t i = 0; i < xi.size(); ++i) {
      if (!(xi[i] >= lower_[i] && xi[i] <= upper_[i])) return false;
    }
    return true;
  }

  void sample_uniform(Rng& rng, std::span<double> out) const {
    for (std::size_t i = 0; i < lower_.size(); ++i) out[i] = rng.uniform(lower_[i], upper_[i]);
  }

  /// Smallest box holding every point, grown by `pad` on each side.
  static Box bounding(const SampleSet& data, double pad) {
    Vec lo(data.dim(), INFINITY), hi(data.dim(), -INFINITY);
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto p = data.point(i);
      for (std::size_t j = 0; j < data.dim(); ++j) {
        lo[j] = std::min(lo[j], p[j]);
        hi[j] = std::max(hi[j], p[j]);
      }
    }
    for (std::size_t j = 0; j < data.dim(); ++j) {
      lo[j] -= pad;
      hi[j] += pad;
      if (!(lo[j] < hi[j])) {
        lo[j] -= 0.5;
        hi[j] += 0.5;
      }
    }
    return Box(std::move(lo), std::move(hi));
  }

 private:
  Vec lower_;
  Vec upper_;
};

// ---------------------------------------------------------------------------
// DensityBand

enum class BandKind { ShapeRestricted, KDE, Explicit };

inline const char* to_string(BandKind k) {
  switch (k) {
    case BandKind::ShapeRestricted: return "sr";
    case BandKind::KDE: return "kde";
    case BandKind::Explicit: return "explicit";
  }
  return "?";
}

struct BandValue {
  double lower = 0.0;
  double upper = 0.0;
};

/// Evaluator behind a DensityBand. Implementations only see points inside
/// the band's box.
class BandModel {
 public:
  virtual ~BandModel() = default;
  virtual BandValue eval_inside(std::span<const double> xi) const = 0;
};

/// Pair of functions (l, u) on a compact box, zero outside it. Immutable and
/// cheap to copy; the model is shared.
class DensityBand {
 public:
  DensityBand() = default;
  DensityBand(BandKind kind, Box box, double cap, std::shared_ptr<const BandModel> model)
      : kind_(kind), box_(std::move(box)), cap_(cap), model_(std::move(model)) {
    detail::require(cap_ > 0.0 && std::isfinite(cap_), "DensityBand: cap must be finite and positive");
    detail::require(model_ != nullptr, "DensityBand: missing model");
  }

  BandKind kind() const { return kind_; }
  const Box& box() const { return box_; }
  std::size_t dim() const { return box_.dim(); }
  double cap() const { return cap_; }

  BandValue eval(std::span<const double> xi) const {
    if (!box_.contains(xi)) return {};
    return model_->eval_inside(xi);
  }
  BandValue eval(double xi) const { return eval(std::span<const double>(&xi, 1)); }

  template <class Model>
  const Model* model_as() const {
    return dynamic_cast<const Model*>(model_.get());
  }

 private:
  BandKind kind_ = BandKind::Explicit;
  Box box_;
  double cap_ = 1.0;
  std::shared_ptr<const BandModel> model_;
};

using BandFunction = std::function<BandValue(std::span<const double>)>;

namespace detail {
class ExplicitModel final : public BandModel {
 public:
  explicit ExplicitModel(BandFunction fn) : fn_(std::move(fn)) {}
  BandValue eval_inside(std::span<const double> xi) const override { return fn_(xi); }

 private:
  BandFunction fn_;
};
}  // namespace detail

/// Band given directly by a function; used for degenerate bands l = u = p and
/// hand-built test instances.
inline DensityBand make_explicit_band(Box box, double cap, BandFunction fn) {
  return DensityBand(BandKind::Explicit, std::move(box), cap,
                     std::make_shared<detail::ExplicitModel>(std::move(fn)));
}

// ---------------------------------------------------------------------------
// ProblemSpec

/// Convex objective f(x, xi) with a subgradient selector and the Euclidean
/// projection onto the feasible set.
struct ProblemSpec {
  std::string name;
  std::size_t dim_x = 0;
  std::function<double(std::span<const double> x, std::span<const double> xi)> evaluate;
  std::function<void(std::span<const double> x, std::span<const double> xi, std::span<double> g)>
      subgrad;
  std::function<void(std::span<double> x)> project;
};

inline double mean_cost(const ProblemSpec& prob, std::span<const double> x, const SampleSet& data) {
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) s += prob.evaluate(x, data.point(i));
  return s / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------
// Dataset CSV: one observation per row, comma separated, '#' header lines.

inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline SampleSet parse_dataset_csv(std::istream& in, std::uint64_t seed = 0) {
  std::vector<Vec> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    Vec row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t end = line.find(',', pos);
      if (end == std::string::npos) end = line.size();
      std::string_view field(line.data() + pos, end - pos);
      while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
      while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
      double v = 0.0;
      auto res = std::from_chars(field.data(), field.data() + field.size(), v);
      if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw InvalidParameter("dataset line " + std::to_string(lineno) + ": bad number '" +
                               std::string(field) + "'");
      }
      row.push_back(v);
      pos = end + 1;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw InvalidParameter("dataset: no observations");
  return SampleSet::from_points(rows, seed);
}

inline SampleSet read_dataset_csv(const std::string& path, std::uint64_t seed = 0) {
  std::ifstream in(path);
  if (!in) throw InvalidParameter("cannot open dataset '" + path + "'");
  return parse_dataset_csv(in, seed);
}

inline void write_dataset_csv(std::ostream& out, const SampleSet& data) {
  out << "# m=" << data.dim() << " N=" << data.size() << " seed=" << data.seed() << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto p = data.point(i);
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (j) out << ',';
      out << format_double(p[j]);
    }
    out << '\n';
  }
}

}  // namespace bandro
