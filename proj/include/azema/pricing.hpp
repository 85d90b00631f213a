#pragma once
// Defaultable zero-coupon bond and rebate prices from a filtered cloud, and the
// nested Monte Carlo representations used to cross-check them. Zero interest
// rate throughout.

#include "azema/common.hpp"
#include "azema/filter.hpp"
#include "azema/hitting.hpp"
#include "azema/parallel.hpp"
#include "azema/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace azema {

struct RebateSpec {
  enum class Kind { none, deterministic, observation };
  Kind kind = Kind::none;
  std::function<double(double)> R;            // deterministic R(s)
  std::function<double(double, double)> g;    // observation functional g(s, Y_s)
  std::string label = "none";

  static RebateSpec none() { return {}; }
  static RebateSpec deterministic(std::function<double(double)> r, std::string label) {
    RebateSpec s;
    s.kind = Kind::deterministic;
    s.R = std::move(r);
    s.label = std::move(label);
    return s;
  }
  static RebateSpec constant(double r) { return deterministic([r](double) { return r; }, concat("constant(", r, ")")); }
  static RebateSpec observation(std::function<double(double, double)> g, std::string label) {
    RebateSpec s;
    s.kind = Kind::observation;
    s.g = std::move(g);
    s.label = std::move(label);
    return s;
  }
};

struct BondSpec {
  double T = 1.0;
  double face = 1.0;
  RebateSpec rebate;
};

struct PricingReport {
  double t = 0.0;
  std::string method;
  std::string branch = "survival";
  double survival_price = 0.0;
  double rebate_value = 0.0;
  double total = 0.0;
  double std_error = 0.0;
};

inline nlohmann::ordered_json to_json(const PricingReport& r) {
  return {{"t", r.t},
          {"method", r.method},
          {"branch", r.branch},
          {"survival_price", r.survival_price},
          {"rebate_value", r.rebate_value},
          {"total", r.total},
          {"stderr", r.std_error}};
}

namespace detail {
inline void require_live(const ParticleCloud& c, double t, double T) {
  if (c.absorbed) throw NumericError("filter is absorbed: the survival-branch price is undefined");
  if (!(t <= T)) throw std::invalid_argument(concat("pricing time t = ", t, " exceeds maturity T = ", T));
}
}  // namespace detail

/// S_t = E_alive[H^a(T - t, X_t)]; 0 on the default branch.
inline double survival_price(const ParticleCloud& c, const HittingModel& h, double t, double T, bool defaulted = false) {
  if (defaulted) return 0.0;
  detail::require_live(c, t, T);
  if (t == T) return 1.0;
  return pi_f(c, [&](double x) { return h.survival(T - t, x); }, true);
}

/// E_alive[int_t^T l^a(s - t, X_t) R(s) ds]. An observation rebate g(s, Y) is
/// priced with the forecast frozen at the current observation y_t.
inline double rebate_value(const ParticleCloud& c, const HittingModel& h, double t, const RebateSpec& spec, double T,
                           double y_t = 0.0, bool defaulted = false) {
  if (defaulted || spec.kind == RebateSpec::Kind::none) return 0.0;
  detail::require_live(c, t, T);
  std::function<double(double)> R = spec.kind == RebateSpec::Kind::deterministic
                                        ? spec.R
                                        : std::function<double(double)>([&](double s) { return spec.g(s, y_t); });
  for (double s : linspace(t, T, 1001))
    if (!std::isfinite(R(s))) throw std::invalid_argument(concat("rebate is unbounded near s = ", s));
  const double horizon = T - t;
  if (horizon <= 0) return 0.0;
  const double far = h.negligible_distance(horizon);
  return pi_f(
      c,
      [&](double x) {
        if (x >= far) return 0.0;
        // The density peaks near u = x^2 / 3, is below e^-100 for u < x^2 / 200
        // and decays like u^-3/2 beyond; in log u the integrand is a unit-width bump.
        auto g = [&](double s) {
          const double u = std::exp(s);
          return h.density(u, x) * R(t + u) * u;
        };
        const double lo = x * x / 200.0;
        if (horizon <= lo) return 0.0;
        return integrate(g, std::log(lo), std::log(horizon), 1e-10).value;
      },
      true);
}

inline PricingReport bond_price(const ParticleCloud& c, const HittingModel& h, double t, const BondSpec& spec,
                                double y_t = 0.0, bool defaulted = false) {
  PricingReport r;
  r.t = t;
  r.method = "filter_projection";
  if (defaulted) {
    r.branch = "default";
    return r;
  }
  r.survival_price = survival_price(c, h, t, spec.T);
  r.rebate_value = rebate_value(c, h, t, spec.rebate, spec.T, y_t);
  r.total = spec.face * r.survival_price + r.rebate_value;
  return r;
}

// ---------------------------------------------------------------------------
// Nested Monte Carlo.

struct NestedOptions {
  std::size_t n_inner = 1000;
  std::size_t n_particles = 1000;  // per inner filter, subsampled from the outer cloud
  std::size_t n_inner_inner = 50;  // duffie_diagnostic only
  std::uint64_t seed = 11;
  double kappa_flag = 1e3;         // inner kappa ratios above this are flagged
  double cell_budget = 2e9;        // particle-steps per call
};

struct NestedEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t n = 0;
  double kappa_mean = 0.0;  // should be 1 when kappa is a true martingale
  double kappa_mean_se = 0.0;
  double kappa_max = 0.0;
  std::size_t flagged = 0;   // inner paths with kappa above the flag, or absorbed
  bool kappa_suspect = false;
};

namespace detail {

/// n equally weighted particles drawn systematically from the alive stratum.
inline ParticleCloud subsample(const ParticleCloud& c, std::size_t n, double u, std::uint64_t seed, Domain domain,
                               std::uint32_t stream) {
  ParticleCloud out;
  out.seed = seed;
  out.domain = domain;
  out.stream = stream;
  out.t = c.t;
  out.x.resize(n);
  out.w.assign(n, 1.0 / static_cast<double>(n));
  out.alive.assign(n, 1);
  const double a = c.alive_mass();
  const double spacing = a / static_cast<double>(n);
  double next = u * spacing, cum = 0.0;
  std::size_t j = 0, last = 0;
  for (std::size_t i = 0; i < c.size() && j < n; ++i) {
    if (!c.alive[i]) continue;
    last = i;
    cum += c.w[i];
    while (j < n && next < cum) {
      out.x[j++] = c.x[i];
      next += spacing;
    }
  }
  while (j < n) out.x[j++] = c.x[last];
  return out;
}

inline void check_budget(double cells, double budget) {
  if (cells > budget) throw ConfigError("pricing.n_inner", concat("nested run needs ", cells, " particle-steps, budget is ", budget));
}

}  // namespace detail

/// S_t = E_Q[exp(-int_t^T lambda) kappa_T / kappa_t | F^Y_t]: inner observation
/// paths are Brownian (the reference measure), each filtered from a fresh
/// subsample of the cloud at t.
inline NestedEstimate price_via_intensity_discount(const ParticleCloud& cloud, const FilterModel& m, double t, double T,
                                                   const NestedOptions& opt) {
  detail::require_live(cloud, t, T);
  if (opt.n_inner < 2) throw ConfigError("pricing.n_inner", "need at least two inner paths");
  const double dt = m.dt();
  const auto steps = static_cast<std::size_t>(std::llround((T - t) / dt));
  detail::check_budget(static_cast<double>(opt.n_inner * opt.n_particles * steps), opt.cell_budget);
  NestedEstimate est;
  est.n = opt.n_inner;
  if (steps == 0) {
    est.estimate = 1.0;
    est.kappa_mean = 1.0;
    return est;
  }
  std::vector<double> vals(opt.n_inner), kap(opt.n_inner);
  std::vector<std::uint8_t> flag(opt.n_inner, 0);
  const CounterRng obs_rng(opt.seed, Domain::inner);
  parallel_for(opt.n_inner, [&](std::size_t j) {
    const auto j32 = static_cast<std::uint32_t>(j);
    auto c = detail::subsample(cloud, opt.n_particles, obs_rng.uniforms(j32, 0, 0, 0).u0, derive_seed(opt.seed, j),
                               Domain::inner, j32);
    c.t = t;
    c.step_index = 0;
    const double sq = std::sqrt(dt);
    double int_lambda = 0.0, log_kappa = 0.0, lambda_prev = m.intensity(c);
    for (std::size_t k = 0; k < steps; ++k) {
      const double dy = sq * inverse_normal_cdf(obs_rng.uniforms(j32, static_cast<std::uint32_t>(k), 1, 1).u0);
      const auto s = step(c, dy, m);
      if (c.absorbed) {
        flag[j] = 1;
        break;
      }
      log_kappa += s.theta * dy - 0.5 * s.theta * s.theta * dt;
      const double lambda = m.intensity(c);
      int_lambda += 0.5 * (lambda_prev + lambda) * dt;
      lambda_prev = lambda;
    }
    kap[j] = std::exp(log_kappa);
    vals[j] = flag[j] ? 0.0 : std::exp(-int_lambda) * kap[j];
    if (kap[j] > opt.kappa_flag) flag[j] = 1;
  });
  const auto s = sample_stats(vals);
  const auto sk = sample_stats(kap);
  est.estimate = s.mean;
  est.std_error = s.std_error;
  est.kappa_mean = sk.mean;
  est.kappa_mean_se = sk.std_error;
  est.kappa_max = *std::max_element(kap.begin(), kap.end());
  est.flagged = static_cast<std::size_t>(std::count(flag.begin(), flag.end(), std::uint8_t{1}));
  est.kappa_suspect = est.flagged > 0 || std::fabs(sk.mean - 1.0) > 5.0 * sk.std_error + 1e-12;
  return est;
}

struct DuffieReport {
  double J = 0.0, J_se = 0.0;
  double jump = 0.0, jump_se = 0.0;
  double difference = 0.0, difference_se = 0.0;
  std::size_t n_inner = 0, n_defaults = 0;
};

namespace detail {

/// One path under the observer's own law from cloud c: dY = theta dt + dbeta,
/// default by thinning at the filtered intensity. Returns int_s^{T ^ tau} lambda
/// and, through `at_default`, the cloud just before default.
inline double run_under_G(ParticleCloud& c, const FilterModel& m, std::size_t steps, const CounterRng& rng,
                          std::uint32_t id, std::uint32_t aux, bool& defaulted, ParticleCloud* at_default) {
  const double dt = m.dt();
  const double sq = std::sqrt(dt);
  defaulted = false;
  double int_lambda = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    if (c.absorbed) {
      defaulted = true;
      break;
    }
    const double lambda = m.intensity(c);
    const auto u = rng.uniforms(id, static_cast<std::uint32_t>(k), aux, 2);
    if (u.u1 < -std::expm1(-lambda * dt)) {
      defaulted = true;
      int_lambda += -std::log1p(-u.u1);  // lambda * (tau - t_k)
      if (at_default) *at_default = c;
      break;
    }
    const double theta = pi_f(c, [&](double x) { return m.obs()(c.t, x); }, true);
    const double dy = theta * dt + sq * inverse_normal_cdf(u.u0);
    step(c, dy, m);
    int_lambda += lambda * dt;
  }
  return int_lambda;
}

}  // namespace detail

/// J_t - E[1{t < tau <= T} Delta J_tau | G_t] with J_s = E[exp(-int_s^{T ^ tau} lambda) | G_s].
/// Delta J_tau = 1 - J_{tau-}, the survival-branch value just before default,
/// estimated by an inner-inner run from the cloud at default.
inline DuffieReport duffie_diagnostic(const ParticleCloud& cloud, const FilterModel& m, double t, double T,
                                      const NestedOptions& opt) {
  detail::require_live(cloud, t, T);
  if (opt.n_inner < 2 || opt.n_inner > 100000) throw ConfigError("pricing.n_inner", "diagnostic runs 2 to 1e5 inner paths");
  const double dt = m.dt();
  const auto steps = static_cast<std::size_t>(std::llround((T - t) / dt));
  detail::check_budget(static_cast<double>(opt.n_inner * opt.n_particles * steps) *
                           (1.0 + static_cast<double>(opt.n_inner_inner)),
                       opt.cell_budget * 50.0);
  DuffieReport rep;
  rep.n_inner = opt.n_inner;
  if (steps == 0) {
    rep.J = 1.0;
    rep.difference = 1.0;
    return rep;
  }
  std::vector<double> jv(opt.n_inner), jump(opt.n_inner), diff(opt.n_inner);
  std::vector<std::uint8_t> hit(opt.n_inner, 0);
  const CounterRng rng(opt.seed, Domain::inner);
  parallel_for(opt.n_inner, [&](std::size_t j) {
    const auto j32 = static_cast<std::uint32_t>(j);
    auto c = detail::subsample(cloud, opt.n_particles, rng.uniforms(j32, 0, 0, 0).u0, derive_seed(opt.seed, j),
                               Domain::inner, j32);
    c.t = t;
    ParticleCloud at_default;
    bool defaulted = false;
    const double il = detail::run_under_G(c, m, steps, rng, j32, 0, defaulted, &at_default);
    jv[j] = std::exp(-il);
    jump[j] = 0.0;
    if (defaulted && !at_default.x.empty()) {
      hit[j] = 1;
      const auto k0 = static_cast<std::size_t>(std::llround((at_default.t - t) / dt));
      const std::size_t rest = steps - std::min(steps, k0);
      double s = 0.0;
      for (std::size_t r = 0; r < opt.n_inner_inner; ++r) {
        ParticleCloud ci = at_default;
        ci.seed = derive_seed(derive_seed(opt.seed, j), r + 1);
        ci.stream = static_cast<std::uint32_t>(r);
        bool d2 = false;
        s += std::exp(-detail::run_under_G(ci, m, rest, rng, j32, static_cast<std::uint32_t>(r + 1), d2, nullptr));
      }
      jump[j] = 1.0 - s / static_cast<double>(opt.n_inner_inner);
    } else if (defaulted) {
      hit[j] = 1;  // absorbed inner filter: J_{tau-} taken as 0
      jump[j] = 1.0;
    }
    diff[j] = jv[j] - jump[j];
  });
  const auto sj = sample_stats(jv), sjump = sample_stats(jump), sd = sample_stats(diff);
  rep.J = sj.mean;
  rep.J_se = sj.std_error;
  rep.jump = sjump.mean;
  rep.jump_se = sjump.std_error;
  rep.difference = sd.mean;
  rep.difference_se = sd.std_error;
  rep.n_defaults = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), std::uint8_t{1}));
  return rep;
}

}  // namespace azema
