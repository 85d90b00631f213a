#pragma once
// Drift a(x), observation coefficient b(t,x) and initial law of the firm value.

#include "azema/common.hpp"
#include "azema/rng.hpp"

#include <boost/math/interpolators/pchip.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace azema {

namespace detail {

/// Ordinary least squares y = intercept + slope * x.
inline std::pair<double, double> fit_line(std::span<const double> xs, std::span<const double> ys) {
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double denom = n * sxx - sx * sx;
  if (xs.size() < 2 || denom == 0.0) return {xs.empty() ? 0.0 : sy / n, 0.0};
  const double slope = (n * sxy - sx * sy) / denom;
  return {(sy - slope * sx) / n, slope};
}

/// Monotone cubic table with affine extrapolation. The right tail keeps the
/// slope fitted over the last decade of the table, anchored at the last node.
class TabulatedCurve {
 public:
  TabulatedCurve(std::vector<double> xs, std::vector<double> ys) : xs_(std::move(xs)), ys_(std::move(ys)) {
    if (xs_.size() != ys_.size() || xs_.size() < 4)
      throw ConfigError("drift.table", "tabulated drift needs at least 4 (x, value) rows");
    for (std::size_t i = 0; i < xs_.size(); ++i) {
      if (!std::isfinite(xs_[i]) || !std::isfinite(ys_[i]))
        throw ConfigError("drift.table", concat("non-finite table entry at row ", i));
      if (i > 0 && !(xs_[i] > xs_[i - 1])) throw ConfigError("drift.table", "x column must be strictly ascending");
    }
    const double x_max = xs_.back();
    const double x_from = x_max > 0 ? x_max / 10.0 : xs_[xs_.size() - 4];
    std::vector<double> tx, ty;
    for (std::size_t i = 0; i < xs_.size(); ++i) {
      if (xs_[i] >= x_from) {
        tx.push_back(xs_[i]);
        ty.push_back(ys_[i]);
      }
    }
    if (tx.size() < 2) {
      tx.assign(xs_.end() - 2, xs_.end());
      ty.assign(ys_.end() - 2, ys_.end());
    }
    std::tie(tail_intercept_, tail_slope_) = fit_line(tx, ty);
    interp_ = std::make_shared<boost::math::interpolators::pchip<std::vector<double>>>(
        std::vector<double>(xs_), std::vector<double>(ys_));
    left_slope_ = interp_->prime(xs_.front());
  }

  double value(double x) const {
    if (x < xs_.front()) return ys_.front() + left_slope_ * (x - xs_.front());
    if (x > xs_.back()) return ys_.back() + tail_slope_ * (x - xs_.back());
    return (*interp_)(x);
  }

  double derivative(double x) const {
    if (x < xs_.front()) return left_slope_;
    if (x > xs_.back()) return tail_slope_;
    return interp_->prime(x);
  }

  double tail_slope() const noexcept { return tail_slope_; }
  double tail_intercept() const noexcept { return tail_intercept_; }
  const std::vector<double>& xs() const noexcept { return xs_; }
  const std::vector<double>& ys() const noexcept { return ys_; }

 private:
  std::vector<double> xs_, ys_;
  std::shared_ptr<boost::math::interpolators::pchip<std::vector<double>>> interp_;
  double tail_intercept_ = 0.0;
  double tail_slope_ = 0.0;
  double left_slope_ = 0.0;
};

/// Reads whitespace-separated (x, value) rows; '#' starts a comment.
inline std::pair<std::vector<double>, std::vector<double>> read_two_columns(const std::string& path,
                                                                           const std::string& field) {
  std::ifstream in(path);
  if (!in) throw ConfigError(field, "cannot open table file '" + path + "'");
  std::vector<double> xs, ys;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream row(line);
    double x, y;
    if (row >> x >> y) {
      xs.push_back(x);
      ys.push_back(y);
    }
  }
  return {std::move(xs), std::move(ys)};
}

}  // namespace detail

/// Drift a(x) of the firm value dX = dW + a(X) dt.
class Drift {
 public:
  enum class Kind { zero, constant, affine, tabulated };

  static Drift zero() { return Drift(Kind::zero, 0.0, 0.0); }
  static Drift constant(double c) { return Drift(Kind::constant, c, 0.0); }
  /// a(x) = alpha + beta * x
  static Drift affine(double alpha, double beta) { return Drift(Kind::affine, alpha, beta); }
  static Drift tabulated(std::vector<double> xs, std::vector<double> values) {
    Drift d(Kind::tabulated, 0.0, 0.0);
    d.table_ = std::make_shared<const detail::TabulatedCurve>(std::move(xs), std::move(values));
    return d;
  }
  static Drift tabulated_file(const std::string& path) {
    auto [xs, ys] = detail::read_two_columns(path, "drift.table");
    return tabulated(std::move(xs), std::move(ys));
  }

  Kind kind() const noexcept { return kind_; }
  double alpha() const noexcept { return alpha_; }
  double beta() const noexcept { return beta_; }
  const detail::TabulatedCurve* table() const noexcept { return table_.get(); }

  double operator()(double x) const {
    switch (kind_) {
      case Kind::zero: return 0.0;
      case Kind::constant: return alpha_;
      case Kind::affine: return alpha_ + beta_ * x;
      case Kind::tabulated: return table_->value(x);
    }
    return 0.0;
  }

  double derivative(double x) const {
    switch (kind_) {
      case Kind::zero:
      case Kind::constant: return 0.0;
      case Kind::affine: return beta_;
      case Kind::tabulated: return table_->derivative(x);
    }
    return 0.0;
  }

  /// Is this a(x) = -K x for some K > 0, i.e. an Ornstein-Uhlenbeck pull to 0?
  bool is_pure_mean_reversion() const noexcept { return kind_ == Kind::affine && alpha_ == 0.0 && beta_ < 0.0; }

  std::string describe() const {
    switch (kind_) {
      case Kind::zero: return "zero";
      case Kind::constant: return concat("constant(", alpha_, ")");
      case Kind::affine: return concat("affine(", alpha_, ", ", beta_, ")");
      case Kind::tabulated: return concat("tabulated(", table_->xs().size(), " rows)");
    }
    return "?";
  }

 private:
  Drift(Kind k, double a, double b) : kind_(k), alpha_(a), beta_(b) {}
  Kind kind_;
  double alpha_;
  double beta_;
  std::shared_ptr<const detail::TabulatedCurve> table_;
};

/// A(x) = integral of a over [0, x]. Exact for the closed kinds; adaptive
/// quadrature (absolute error <= 1e-10) for tables.
inline double potential_A(const Drift& a, double x) {
  if (!std::isfinite(x)) throw ConfigError("x", "potential_A needs a finite argument");
  switch (a.kind()) {
    case Drift::Kind::zero: return 0.0;
    case Drift::Kind::constant: return a.alpha() * x;
    case Drift::Kind::affine: return a.alpha() * x + 0.5 * a.beta() * x * x;
    case Drift::Kind::tabulated: {
      // Split at the table nodes so each panel sees a single cubic piece.
      const auto& xs = a.table()->xs();
      const double lo = std::min(0.0, x), hi = std::max(0.0, x);
      std::vector<double> cuts{lo};
      for (double node : xs)
        if (node > lo && node < hi) cuts.push_back(node);
      cuts.push_back(hi);
      double total = 0.0;
      const double per_panel = 1e-10 / static_cast<double>(cuts.size());
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
        total += integrate([&](double y) { return a(y); }, cuts[i], cuts[i + 1], per_panel).value;
      return x >= 0 ? total : -total;
    }
  }
  return 0.0;
}

/// Grid with n equally spaced points on [lo, hi].
inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  if (n == 1) {
    g[0] = lo;
    return g;
  }
  for (std::size_t i = 0; i < n; ++i) g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

/// Default validation grid: [0, 50] with 10^4 points.
inline std::vector<double> default_validation_grid() { return linspace(0.0, 50.0, 10000); }

/// Smallest K with |a(x)| <= K (1 + |x|): the supremum over the grid, joined with
/// the exact limit |slope| of the affine tail when the kind has one.
inline double linear_growth_K(const Drift& a, std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("grid", "linear_growth_K needs a nonempty grid");
  double k = 0.0;
  for (double x : grid) {
    const double v = a(x);
    if (!std::isfinite(v)) throw NumericError(concat("drift is not finite at x = ", x));
    k = std::max(k, std::fabs(v) / (1.0 + std::fabs(x)));
  }
  if (a.kind() == Drift::Kind::affine) k = std::max(k, std::fabs(a.beta()));
  if (a.kind() == Drift::Kind::tabulated) k = std::max(k, std::fabs(a.table()->tail_slope()));
  return k;
}

enum class Limit { minus_infinity, finite, plus_infinity };

inline const char* to_string(Limit l) {
  switch (l) {
    case Limit::minus_infinity: return "-inf";
    case Limit::finite: return "finite";
    case Limit::plus_infinity: return "+inf";
  }
  return "?";
}

struct DriftReport {
  double sup_abs_derivative = 0.0;
  double derivative_growth = 1.0;  // sup|a'| over the upper half of the grid / over the lower half
  bool bounded_derivative = false;

  Limit a_at_infinity = Limit::finite;
  double a_limit_value = 0.0;  // meaningful when a_at_infinity is finite
  Limit A_at_infinity = Limit::finite;
  bool A_limit_exists = false;

  bool mean_reversion_branch = false;  // a(inf) = -inf
  double K_a = 0.0;
  double g_a = 0.0;
  double c_f = 0.0;
  double p = 0.0;
  bool f_a_nonpositive = true;  // informational; the growth bound is what the hitting bounds use
  bool tail_growth_ok = true;

  bool passed() const noexcept { return bounded_derivative && A_limit_exists && tail_growth_ok; }
};

/// Grid check of the standing drift assumptions. Affine kinds are decided in
/// closed form; tabulated kinds from the grid and the fitted affine tail.
inline DriftReport validate_drift(const Drift& a, std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("grid", "validate_drift needs a nonempty grid");
  DriftReport r;
  std::vector<double> g(grid.begin(), grid.end());
  std::sort(g.begin(), g.end());
  for (double x : g) {
    if (!std::isfinite(x)) throw ConfigError("grid", "grid contains a non-finite value");
    const double v = a(x), d = a.derivative(x);
    if (!std::isfinite(v) || !std::isfinite(d)) throw NumericError(concat("drift is not finite at x = ", x));
  }

  // Clause 1: bounded derivative.
  double sup_lower = 0.0, sup_upper = 0.0;
  const double mid = 0.5 * (g.front() + g.back());
  for (double x : g) {
    double& sup = x <= mid ? sup_lower : sup_upper;
    sup = std::max(sup, std::fabs(a.derivative(x)));
  }
  r.sup_abs_derivative = std::max(sup_lower, sup_upper);
  r.derivative_growth = sup_lower > 0 ? sup_upper / sup_lower : (sup_upper > 0 ? kInf : 1.0);
  switch (a.kind()) {
    case Drift::Kind::zero:
    case Drift::Kind::constant:
    case Drift::Kind::affine: r.bounded_derivative = true; break;
    case Drift::Kind::tabulated: r.bounded_derivative = r.derivative_growth <= 1.5; break;
  }

  // Clauses 2 and 3: behaviour at infinity.
  double slope = 0.0, intercept = 0.0;
  switch (a.kind()) {
    case Drift::Kind::zero: break;
    case Drift::Kind::constant: intercept = a.alpha(); break;
    case Drift::Kind::affine:
      intercept = a.alpha();
      slope = a.beta();
      break;
    case Drift::Kind::tabulated:
      intercept = a.table()->tail_intercept();
      slope = a.table()->tail_slope();
      if (std::fabs(slope) <= 1e-8 * std::max(1.0, std::fabs(intercept))) slope = 0.0;
      break;
  }
  if (slope < 0) {
    r.a_at_infinity = Limit::minus_infinity;
  } else if (slope > 0) {
    r.a_at_infinity = Limit::plus_infinity;
  } else {
    r.a_at_infinity = Limit::finite;
    r.a_limit_value = intercept;
  }
  if (r.a_at_infinity == Limit::finite) {
    r.A_at_infinity = intercept > 0 ? Limit::plus_infinity : intercept < 0 ? Limit::minus_infinity : Limit::finite;
  } else {
    r.A_at_infinity = r.a_at_infinity;
  }
  if (a.kind() == Drift::Kind::tabulated) {
    // A has a limit iff a keeps one sign on the tail; a sign change on the last
    // decade means A oscillates on the grid's scale.
    const double x_from = g.back() / 10.0;
    bool pos = false, neg = false;
    for (double x : g) {
      if (x < x_from) continue;
      const double v = a(x);
      pos = pos || v > 1e-12;
      neg = neg || v < -1e-12;
    }
    r.A_limit_exists = !(pos && neg);
    if (!pos && !neg && r.a_at_infinity == Limit::finite) r.A_at_infinity = Limit::finite;
  } else {
    r.A_limit_exists = true;
  }

  if (r.a_at_infinity == Limit::minus_infinity) {
    r.mean_reversion_branch = true;
    r.K_a = -slope;
    auto f_a = [&](double x) { return a(x) + r.K_a * x; };
    if (a.kind() == Drift::Kind::affine) {
      // f_a = alpha: -int f_a = -alpha x.
      r.f_a_nonpositive = a.alpha() <= 0.0;
      r.g_a = 0.0;
      r.p = a.alpha() < 0 ? 1.0 : 0.0;
      r.c_f = a.alpha() < 0 ? -a.alpha() : 0.0;
    } else {
      // Smallest grid point beyond which f_a stays nonpositive.
      r.g_a = g.back();
      for (std::size_t i = g.size(); i-- > 0;) {
        if (f_a(g[i]) > 1e-9) break;
        r.g_a = g[i];
      }
      r.f_a_nonpositive = r.g_a < g.back();
      // Log-log fit of F(x) = -int_0^x f_a over the tail.
      std::vector<double> lx, ly;
      double F = 0.0;
      for (std::size_t i = 1; i < g.size(); ++i) {
        F -= 0.5 * (f_a(g[i - 1]) + f_a(g[i])) * (g[i] - g[i - 1]);
        if (g[i] >= g.back() / 10.0 && F > 1e-12 && g[i] > 0) {
          lx.push_back(std::log(g[i]));
          ly.push_back(std::log(F));
        }
      }
      if (lx.size() >= 2) {
        auto [log_c, p] = detail::fit_line(lx, ly);
        r.p = p;
        r.c_f = std::exp(log_c);
      }
    }
    r.tail_growth_ok = r.p < 1.95;
  }
  return r;
}

/// Observation coefficient b(t, x) with b(t, 0) = 0.
class Observation {
 public:
  enum class Kind { zero, linear, clipped_linear };

  static Observation zero() { return Observation(Kind::zero, 0.0, kInf); }
  /// b(t, x) = slope * x
  static Observation linear(double slope) { return Observation(Kind::linear, slope, kInf); }
  /// b(t, x) = slope * clamp(x, -cap, cap): Lipschitz and bounded by |slope| * cap.
  static Observation clipped_linear(double slope, double cap) {
    if (!(cap > 0)) throw ConfigError("observation.cap", "cap must be positive");
    return Observation(Kind::clipped_linear, slope, cap);
  }

  double operator()(double /*t*/, double x) const noexcept {
    switch (kind_) {
      case Kind::zero: return 0.0;
      case Kind::linear: return slope_ * x;
      case Kind::clipped_linear: return slope_ * std::clamp(x, -cap_, cap_);
    }
    return 0.0;
  }

  Kind kind() const noexcept { return kind_; }
  double slope() const noexcept { return slope_; }
  double cap() const noexcept { return cap_; }
  /// K_b(T) with |b(t, x)| <= K_b |x|.
  double lipschitz() const noexcept { return kind_ == Kind::zero ? 0.0 : std::fabs(slope_); }
  bool is_zero() const noexcept { return kind_ == Kind::zero || slope_ == 0.0; }
  bool bounded() const noexcept { return kind_ != Kind::linear || slope_ == 0.0; }
  double sup_abs() const noexcept {
    switch (kind_) {
      case Kind::zero: return 0.0;
      case Kind::linear: return slope_ == 0.0 ? 0.0 : kInf;
      case Kind::clipped_linear: return std::fabs(slope_) * cap_;
    }
    return kInf;
  }

  std::string describe() const {
    switch (kind_) {
      case Kind::zero: return "zero";
      case Kind::linear: return concat("linear(", slope_, ")");
      case Kind::clipped_linear: return concat("clipped_linear(", slope_, ", ", cap_, ")");
    }
    return "?";
  }

 private:
  Observation(Kind k, double s, double c) : kind_(k), slope_(s), cap_(c) {}
  Kind kind_;
  double slope_;
  double cap_;
};

struct ObservationReport {
  bool vanishes_at_zero = true;
  bool lipschitz_bound_holds = true;
  double max_ratio = 0.0;  // max |b(t,x)| / |x| on the grid
  bool passed() const noexcept { return vanishes_at_zero && lipschitz_bound_holds; }
};

inline ObservationReport validate_observation(const Observation& b, double horizon, std::span<const double> xs,
                                              std::size_t n_times = 11) {
  ObservationReport r;
  const double kb = b.lipschitz();
  for (double t : linspace(0.0, horizon, n_times)) {
    if (b(t, 0.0) != 0.0) r.vanishes_at_zero = false;
    for (double x : xs) {
      const double v = b(t, x);
      if (!std::isfinite(v)) throw NumericError(concat("observation coefficient not finite at (", t, ", ", x, ")"));
      if (x != 0.0) r.max_ratio = std::max(r.max_ratio, std::fabs(v) / std::fabs(x));
      if (std::fabs(v) > kb * std::fabs(x) * (1 + 1e-12)) r.lipschitz_bound_holds = false;
    }
  }
  return r;
}

/// Law of X_0 on (0, inf).
class InitialLaw {
 public:
  enum class Kind { point, lognormal, tabulated };

  static InitialLaw point(double x0) {
    if (!(x0 > 0) || !std::isfinite(x0)) throw ConfigError("init.x0", "initial point must be positive and finite");
    InitialLaw l(Kind::point);
    l.a_ = x0;
    return l;
  }
  /// X_0 = exp(m + s N)
  static InitialLaw lognormal(double m, double s) {
    if (!(s >= 0) || !std::isfinite(m)) throw ConfigError("init.s", "lognormal parameters must be finite, s >= 0");
    InitialLaw l(Kind::lognormal);
    l.a_ = m;
    l.b_ = s;
    return l;
  }
  static InitialLaw tabulated(std::vector<double> xs, std::vector<double> ps) {
    if (xs.empty() || xs.size() != ps.size()) throw ConfigError("init.table", "support and probabilities must match");
    double total = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!(xs[i] > 0) || !std::isfinite(xs[i])) throw ConfigError("init.table", "support must lie in (0, inf)");
      if (!(ps[i] >= 0)) throw ConfigError("init.table", "probabilities must be nonnegative");
      total += ps[i];
    }
    if (std::fabs(total - 1.0) > 1e-9) throw ConfigError("init.table", concat("probabilities sum to ", total, ", not 1"));
    InitialLaw l(Kind::tabulated);
    l.xs_ = std::move(xs);
    l.ps_ = std::move(ps);
    l.cdf_.resize(l.ps_.size());
    double c = 0.0;
    for (std::size_t i = 0; i < l.ps_.size(); ++i) l.cdf_[i] = (c += l.ps_[i]);
    l.cdf_.back() = 1.0;
    return l;
  }

  Kind kind() const noexcept { return kind_; }

  /// Inverse-CDF sample from a uniform in (0, 1).
  double sample(double u) const {
    switch (kind_) {
      case Kind::point: return a_;
      case Kind::lognormal: return std::exp(a_ + b_ * inverse_normal_cdf(u));
      case Kind::tabulated: {
        const auto it = std::lower_bound(cdf_.begin(), cdf_.end(), u);
        return xs_[static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                                      static_cast<std::ptrdiff_t>(xs_.size()) - 1))];
      }
    }
    return a_;
  }

  /// E[g(X_0)].
  template <class G>
  double expect(G&& g) const {
    switch (kind_) {
      case Kind::point: return g(a_);
      case Kind::tabulated: {
        double s = 0.0;
        for (std::size_t i = 0; i < xs_.size(); ++i) s += ps_[i] * g(xs_[i]);
        return s;
      }
      case Kind::lognormal: {
        if (b_ == 0.0) return g(std::exp(a_));
        return integrate([&](double z) { return g(std::exp(a_ + b_ * z)) * std::exp(-0.5 * z * z) / kSqrt2Pi; },
                         -12.0, 12.0, 1e-9)
            .value;
      }
    }
    return 0.0;
  }

  double mean() const {
    if (kind_ == Kind::lognormal) return std::exp(a_ + 0.5 * b_ * b_);
    return expect([](double x) { return x; });
  }
  double second_moment() const {
    if (kind_ == Kind::lognormal) return std::exp(2 * a_ + 2 * b_ * b_);
    return expect([](double x) { return x * x; });
  }

  std::string describe() const {
    switch (kind_) {
      case Kind::point: return concat("point(", a_, ")");
      case Kind::lognormal: return concat("lognormal(", a_, ", ", b_, ")");
      case Kind::tabulated: return concat("tabulated(", xs_.size(), " atoms)");
    }
    return "?";
  }

 private:
  explicit InitialLaw(Kind k) : kind_(k) {}
  Kind kind_;
  double a_ = 1.0;
  double b_ = 0.0;
  std::vector<double> xs_, ps_, cdf_;
};

}  // namespace azema
