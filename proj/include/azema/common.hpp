#pragma once

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>

namespace azema {

/// Numerical failure inside the library (non-finite values, non-convergence).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration; `field()` names the offending setting, e.g. "scenario.dt".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kSqrt2Pi = 2.506628274631000502415765284811;

namespace detail {
template <class T>
void put(std::ostringstream& os, const T& v) {
  if constexpr (std::is_floating_point_v<std::decay_t<T>>) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, static_cast<double>(v));  // shortest round-trip form
    os.write(buf, r.ptr - buf);
  } else {
    os << v;
  }
}
}  // namespace detail

template <class... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (detail::put(os, args), ...);
  return os.str();
}

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
};

/// Adaptive Gauss-Kronrod (31-point) on [a, b]. Throws NumericError when the
/// estimated absolute error exceeds `abs_tol`.
template <class F>
QuadratureResult integrate(F&& f, double a, double b, double abs_tol = 1e-10, unsigned max_depth = 20) {
  if (a == b) return {};
  double err = 0.0;
  double l1 = 0.0;
  const double value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
      std::forward<F>(f), a, b, max_depth, 1e-13, &err, &l1);
  if (!std::isfinite(value)) throw NumericError(concat("quadrature produced a non-finite value on [", a, ", ", b, "]"));
  if (err > abs_tol && err > 1e-12 * l1)
    throw NumericError(concat("quadrature did not converge on [", a, ", ", b, "]: achieved ", err, ", wanted ", abs_tol));
  return {value, err};
}

/// Golden-section search for the maximum of a unimodal f on [lo, hi].
template <class F>
double golden_section_argmax(F&& f, double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = f(c);
  double fd = f(d);
  while (hi - lo > tol) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = f(d);
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace azema
