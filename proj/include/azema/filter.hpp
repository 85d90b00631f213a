#pragma once
// Particle approximation of the conditional law of the stopped firm value given
// the observations. Weights are the Girsanov likelihood of Y (Itô, pre-step
// position); killed particles hand their weight to a scalar dead mass, so
// Z = alive mass / total mass is the unnormalized-mass ratio at every step.

#include "azema/coeffs.hpp"
#include "azema/common.hpp"
#include "azema/hitting.hpp"
#include "azema/parallel.hpp"
#include "azema/rng.hpp"
#include "azema/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <string>
#include <vector>

namespace azema {

struct ParticleCloud {
  std::vector<double> x;          // 0 for dead slots
  std::vector<double> w;          // alive weights; sum(w) + dead_mass = 1 after each step
  std::vector<std::uint8_t> alive;
  double dead_mass = 0.0;
  double log_normalizer = 0.0;    // log of the accumulated unnormalized total mass
  double t = 0.0;
  std::size_t step_index = 0;
  std::size_t resamples = 0;
  bool absorbed = false;          // every particle has been killed
  double last_Z = 1.0;
  std::uint64_t seed = 1;
  Domain domain = Domain::particle;
  std::uint32_t stream = 0;       // observation path the cloud follows

  std::size_t size() const noexcept { return x.size(); }
  double alive_mass() const {
    double a = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (alive[i]) a += w[i];
    return a;
  }
  std::size_t alive_count() const {
    return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), std::uint8_t{1}));
  }
  double Z() const {
    if (absorbed) return last_Z;
    const double a = alive_mass();
    return a / (a + dead_mass);
  }
  /// (sum w)^2 / sum w^2 over the alive stratum.
  double ess() const {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (alive[i]) {
        s += w[i];
        s2 += w[i] * w[i];
      }
    return s2 > 0 ? s * s / s2 : 0.0;
  }
};

inline ParticleCloud init_cloud(const InitialLaw& init, std::size_t n_particles, std::uint64_t seed,
                                std::uint32_t stream = 0) {
  if (n_particles < 100) throw ConfigError("filter.n_particles", concat("need at least 100 particles, got ", n_particles));
  if (n_particles >= (std::size_t{1} << 32)) throw ConfigError("filter.n_particles", "too many particles");
  ParticleCloud c;
  c.seed = seed;
  c.stream = stream;
  c.x.resize(n_particles);
  c.w.assign(n_particles, 1.0 / static_cast<double>(n_particles));
  c.alive.assign(n_particles, 1);
  const CounterRng rng(seed, Domain::init);
  for (std::size_t i = 0; i < n_particles; ++i)
    c.x[i] = init.sample(rng.uniforms(static_cast<std::uint32_t>(i), 0, stream, 1).u0);
  return c;
}

/// sum_all w f(x_eff) / sum_all w with x_eff = 0 for dead particles, or the
/// alive-conditioned mean when `alive_only`.
template <class F>
double pi_f(const ParticleCloud& c, F&& f, bool alive_only = false) {
  double s = 0.0, a = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!c.alive[i]) continue;
    const double v = f(c.x[i]);
    if (!std::isfinite(v)) throw NumericError(concat("test function not finite at particle ", i, ", x = ", c.x[i]));
    s += c.w[i] * v;
    a += c.w[i];
  }
  if (alive_only) return a > 0 ? s / a : 0.0;
  const double f0 = c.dead_mass > 0 ? f(0.0) : 0.0;
  return (s + c.dead_mass * f0) / (a + c.dead_mass);
}

// ---------------------------------------------------------------------------
// Intensity.

/// 1 - H^a(eps, x) tabulated on [0, cutoff] for the particle loop.
class DefaultProbTable {
 public:
  DefaultProbTable() = default;
  DefaultProbTable(const HittingModel& m, double eps, std::size_t n = 8192) : eps_(eps) {
    if (const auto* tab = m.table())
      if (eps < tab->resolution())
        throw ConfigError("filter.eps", concat("eps = ", eps, " is below the density-table resolution ", tab->resolution()));
    cutoff_ = m.negligible_distance(eps);
    if (!std::isfinite(cutoff_)) cutoff_ = m.table() ? m.table()->xs().back() : 50.0;
    h_ = cutoff_ / static_cast<double>(n);
    v_.resize(n + 2);
    v_[0] = 1.0;
    for (std::size_t i = 1; i <= n + 1; ++i) v_[i] = m.default_probability(eps, h_ * static_cast<double>(i));
    tail_ = m.closed_form() ? 0.0 : v_[n];
  }
  double operator()(double x) const noexcept {
    if (x >= cutoff_) return tail_;
    const double u = x / h_;
    const auto i = static_cast<std::size_t>(u);
    const double f = u - static_cast<double>(i);
    return v_[i] + f * (v_[i + 1] - v_[i]);
  }
  double eps() const noexcept { return eps_; }
  double cutoff() const noexcept { return cutoff_; }

 private:
  double eps_ = 0.0, cutoff_ = 0.0, h_ = 1.0, tail_ = 0.0;
  std::vector<double> v_;
};

/// lambda^eps = (1/eps) E_alive[1 - H^a(eps, X)], optionally Richardson
/// extrapolated as 2 lambda^{eps/2} - lambda^eps. Direct evaluation, no table.
inline double intensity(const ParticleCloud& c, const HittingModel& m, double eps, bool richardson = true) {
  if (!(eps > 0)) throw ConfigError("filter.eps", "eps must be positive");
  if (const auto* tab = m.table())
    if ((richardson ? eps / 2 : eps) < tab->resolution())
      throw ConfigError("filter.eps", "eps is below the density-table resolution");
  const double far = m.negligible_distance(eps);
  double a = 0.0, s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!c.alive[i]) continue;
    a += c.w[i];
    if (c.x[i] >= far) continue;
    s1 += c.w[i] * m.default_probability(eps, c.x[i]);
    if (richardson) s2 += c.w[i] * m.default_probability(eps / 2, c.x[i]);
  }
  if (!(a > 0)) throw NumericError("intensity needs a surviving particle");
  const double l1 = s1 / (a * eps);
  if (!richardson) return l1;
  return std::max(0.0, 2.0 * (s2 / (a * eps / 2)) - l1);
}

/// Alive particles reweighted by 1 - H^a(eps, x): the law of X_t given the
/// observations and default in (t, t + eps].
inline ParticleCloud default_conditional_cloud(const ParticleCloud& c, const HittingModel& m, double eps) {
  ParticleCloud out = c;
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (!c.alive[i]) continue;
    out.w[i] = c.w[i] * m.default_probability(eps, c.x[i]);
    s += out.w[i];
  }
  if (!(s > 0) || !std::isfinite(s))
    throw NumericError(concat("default-conditional reweighting underflowed at eps = ", eps, "; use a larger eps"));
  for (std::size_t i = 0; i < c.size(); ++i) out.w[i] /= s;
  out.dead_mass = 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Kushner-Stratonovich test functions.

/// Twice-differentiable test function with compact support [lo, hi] in (0, inf).
struct TestFunction {
  std::string name;
  double lo = 0.0, hi = 0.0;
  std::function<double(double)> f, df, d2f;
};

/// Smooth bump exp(-1 / (1 - u^2)), u = (x - center) / width.
inline TestFunction bump(double center, double width) {
  if (!(width > 0) || !(center - width > 0))
    throw ConfigError("filter.test_functions", "bump support must lie inside (0, inf)");
  TestFunction tf;
  tf.name = concat("bump(", center, ",", width, ")");
  tf.lo = center - width;
  tf.hi = center + width;
  auto parts = [center, width](double x, int order) {
    const double u = (x - center) / width;
    if (std::fabs(u) >= 1.0) return 0.0;
    const double v = 1.0 - u * u;
    const double g = std::exp(-1.0 / v);
    if (order == 0) return g;
    // d/du g = g * (-2u / v^2); d2/du2 g = g * (4u^2 / v^4 - (2 + 6u^2) / v^3)
    if (order == 1) return g * (-2.0 * u / (v * v)) / width;
    return g * (4.0 * u * u / (v * v * v * v) - (2.0 + 6.0 * u * u) / (v * v * v)) / (width * width);
  };
  tf.f = [parts](double x) { return parts(x, 0); };
  tf.df = [parts](double x) { return parts(x, 1); };
  tf.d2f = [parts](double x) { return parts(x, 2); };
  return tf;
}

/// Alive-conditioned moments of one test function at one grid time.
struct KsMoments {
  double pi_f = 0.0, pi_Af = 0.0, pi_fb = 0.0;
};

// ---------------------------------------------------------------------------
// Filter model and the one-step update.

struct FilterOptions {
  std::size_t n_particles = 10000;
  double resample_threshold = 0.5;
  double eps = 0.0;  // 0 selects 10 dt
  bool richardson = true;
  std::uint64_t seed = 7;
  std::vector<TestFunction> test_functions;
};

class FilterModel {
 public:
  FilterModel(Drift drift, Observation obs, HittingModel hitting, double dt, FilterOptions opts)
      : drift_(std::move(drift)), obs_(std::move(obs)), hitting_(std::move(hitting)), dt_(dt), opts_(std::move(opts)) {
    if (!(dt_ > 0)) throw ConfigError("scenario.dt", "step must be positive");
    if (!(opts_.resample_threshold >= 0 && opts_.resample_threshold <= 1))
      throw ConfigError("filter.resample_threshold", "threshold must lie in [0, 1]");
    if (opts_.eps == 0.0) opts_.eps = 10.0 * dt_;
    if (!(opts_.eps > 0)) throw ConfigError("filter.eps", "eps must be positive");
    q_eps_ = DefaultProbTable(hitting_, opts_.eps);
    if (opts_.richardson) q_half_ = DefaultProbTable(hitting_, opts_.eps / 2);
  }

  const Drift& drift() const noexcept { return drift_; }
  const Observation& obs() const noexcept { return obs_; }
  const HittingModel& hitting() const noexcept { return hitting_; }
  double dt() const noexcept { return dt_; }
  const FilterOptions& options() const noexcept { return opts_; }
  double eps() const noexcept { return opts_.eps; }

  /// Intensity of the alive stratum through the tabulated 1 - H^a(eps, .).
  double intensity(const ParticleCloud& c) const {
    double a = 0.0, s1 = 0.0, s2 = 0.0;
    const double far = q_eps_.cutoff();
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (!c.alive[i]) continue;
      a += c.w[i];
      if (c.x[i] >= far) continue;
      s1 += c.w[i] * q_eps_(c.x[i]);
      if (opts_.richardson) s2 += c.w[i] * q_half_(c.x[i]);
    }
    if (!(a > 0)) return 0.0;
    const double l1 = s1 / (a * opts_.eps);
    if (!opts_.richardson) return l1;
    return std::max(0.0, 4.0 * s2 / (a * opts_.eps) - l1);
  }

 private:
  Drift drift_;
  Observation obs_;
  HittingModel hitting_;
  double dt_;
  FilterOptions opts_;
  DefaultProbTable q_eps_, q_half_;
};

/// Filter quantities at t_k and the innovations over [t_k, t_k + dt].
struct FilterState {
  double t = 0.0;
  double Z = 1.0;
  double lambda = 0.0;
  double bhat = 0.0;    // E[b(t, X_{t ^ tau}) | F^Y_t]
  double theta = 0.0;   // alive-conditioned mean of b
  double bhat_G = 0.0;  // theta before the observed default, 0 after
  double dY = 0.0;
  double dB_Y = 0.0;
  double dbeta = 0.0;
  double ess = 0.0;
  int D = 1;
};

/// Systematic resampling of the alive stratum into every slot; the dead mass
/// and hence Z are untouched.
inline void resample_alive(ParticleCloud& c) {
  const double a = c.alive_mass();
  const std::size_t n = c.size();
  const double u = CounterRng(c.seed, Domain::resample)
                       .uniforms(c.stream, static_cast<std::uint32_t>(c.step_index), static_cast<std::uint32_t>(c.domain), 0)
                       .u0;
  std::vector<double> nx(n);
  double cum = 0.0;
  std::size_t j = 0;
  const double spacing = a / static_cast<double>(n);
  double next = u * spacing;
  for (std::size_t i = 0; i < n && j < n; ++i) {
    if (!c.alive[i]) continue;
    cum += c.w[i];
    while (j < n && next < cum) {
      nx[j++] = c.x[i];
      next += spacing;
    }
  }
  // Rounding can leave the last few slots unfilled; give them the last alive particle.
  for (std::size_t i = n; j < n && i-- > 0;)
    if (c.alive[i])
      while (j < n) nx[j++] = c.x[i];
  c.x = std::move(nx);
  c.w.assign(n, spacing);
  c.alive.assign(n, 1);
  ++c.resamples;
}

/// Measures the cloud at t_k, then advances it over one step given the
/// observation increment dy. `observed_default` marks that the default has
/// been observed by t_k (only b_G and the innovation beta depend on it).
/// `ks` receives alive-conditioned test-function moments at t_k.
inline FilterState step(ParticleCloud& c, double dy, const FilterModel& m, bool observed_default = false,
                        std::vector<KsMoments>* ks = nullptr) {
  const double dt = m.dt();
  const double t = c.t;
  const std::size_t n = c.size();
  const auto& tfs = m.options().test_functions;
  FilterState s;
  s.t = t;
  s.D = observed_default ? 0 : 1;
  s.dY = dy;
  if (ks) ks->assign(tfs.size(), KsMoments{});

  if (c.absorbed) {
    s.Z = c.last_Z;
    s.dB_Y = dy;
    s.dbeta = dy;
    ++c.step_index;
    c.t = t + dt;
    return s;
  }

  // Measurements at t_k and the likelihood update, one pass.
  const double sq = std::sqrt(dt);
  const CounterRng rng(c.seed, c.domain);
  const auto k32 = static_cast<std::uint32_t>(c.step_index);
  double a = 0.0, a2 = 0.0, bs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!c.alive[i]) continue;
    const double xi = c.x[i];
    const double wi = c.w[i];
    const double bi = m.obs()(t, xi);
    a += wi;
    a2 += wi * wi;
    bs += wi * bi;
    if (ks)
      for (std::size_t j = 0; j < tfs.size(); ++j) {
        if (xi <= tfs[j].lo || xi >= tfs[j].hi) continue;
        const double f = tfs[j].f(xi);
        (*ks)[j].pi_f += wi * f;
        (*ks)[j].pi_Af += wi * (m.drift()(xi) * tfs[j].df(xi) + 0.5 * tfs[j].d2f(xi));
        (*ks)[j].pi_fb += wi * f * bi;
      }
    c.w[i] = wi * std::exp(bi * dy - 0.5 * bi * bi * dt);
  }
  const double total = a + c.dead_mass;
  s.Z = a / total;
  s.bhat = bs / total;
  s.theta = bs / a;
  s.bhat_G = observed_default ? 0.0 : s.theta;
  s.ess = a * a / a2;
  s.dB_Y = dy - s.bhat * dt;
  s.dbeta = dy - s.bhat_G * dt;
  if (ks)
    for (auto& mo : *ks) {
      mo.pi_f /= a;
      mo.pi_Af /= a;
      mo.pi_fb /= a;
    }
  // Propagate and kill. One counter block feeds two neighbouring slots with
  // 32-bit uniforms: (normal, kill) for the even slot, then the odd one.
  double alive_after = 0.0;
  Philox4x32::Counter block{};
  std::size_t block_of = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < n; ++i) {
    if (!c.alive[i]) continue;
    const double x0 = c.x[i];
    if ((i >> 1) != block_of) {
      block_of = i >> 1;
      block = rng.words(static_cast<std::uint32_t>(block_of), k32, c.stream, 0);
    }
    const std::size_t off = (i & 1) * 2;
    const double x1 = x0 + sq * inverse_normal_cdf(bits32_to_open_unit(block[off])) + m.drift()(x0) * dt;
    // exp(-e) < 2^-33 cannot beat a 32-bit uniform.
    const double e = 2.0 * x0 * x1 / dt;
    if (x1 <= 0.0 || (e < 23.0 && bits32_to_open_unit(block[off + 1]) < std::exp(-e))) {
      c.dead_mass += c.w[i];
      c.w[i] = 0.0;
      c.x[i] = 0.0;
      c.alive[i] = 0;
    } else {
      c.x[i] = x1;
      alive_after += c.w[i];
    }
  }
  const double new_total = alive_after + c.dead_mass;
  c.log_normalizer += std::log(new_total);
  for (std::size_t i = 0; i < n; ++i) c.w[i] /= new_total;
  c.dead_mass /= new_total;
  c.last_Z = s.Z;
  ++c.step_index;
  c.t = t + dt;

  if (alive_after <= 0.0) {
    c.absorbed = true;
    return s;
  }
  c.last_Z = alive_after / new_total;
  const double ess_after = c.ess();
  if (ess_after < m.options().resample_threshold * static_cast<double>(n)) resample_alive(c);
  return s;
}

// ---------------------------------------------------------------------------
// Trajectories.

struct FilterTrajectory {
  double dt = 0.0;
  std::vector<FilterState> states;  // t_0 .. t_n; the last carries no innovation
  std::vector<double> xi, kappa;    // exponential formulas, left-point rules
  std::vector<double> log_xi_particle;  // accumulated particle normalizer
  std::vector<double> C, Lambda, L, int_lambda;
  std::vector<std::vector<KsMoments>> ks;  // [k][test function]
  std::size_t default_index = 0;  // observed default: first grid index with D = 0
  double tau = kInf;
  bool absorbed = false;
  std::size_t resamples = 0;

  std::size_t size() const { return states.size(); }
};

/// xi = exp(int bhat dY - 1/2 int bhat^2 ds), kappa = exp(int theta dY - 1/2 int theta^2 ds).
inline std::pair<std::vector<double>, std::vector<double>> multiplicative_factors(const FilterTrajectory& tr) {
  if (tr.absorbed) throw NumericError("multiplicative factors are undefined once the filter is absorbed");
  const std::size_t n = tr.states.size();
  std::vector<double> xi(n, 1.0), kappa(n, 1.0);
  double lx = 0.0, lk = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const auto& s = tr.states[k];
    lx += s.bhat * s.dY - 0.5 * s.bhat * s.bhat * tr.dt;
    lk += s.theta * s.dY - 0.5 * s.theta * s.theta * tr.dt;
    xi[k + 1] = std::exp(lx);
    kappa[k + 1] = std::exp(lk);
  }
  return {xi, kappa};
}

/// Sees the cloud at t_k before it is advanced.
using CloudObserver = std::function<void(std::size_t k, const ParticleCloud& cloud)>;

/// Runs the filter along observation increments dY[k] over [t_k, t_{k+1}].
/// default_index is the first grid index at which default has been observed
/// (dY.size() + 1 for none) and tau the default time.
inline FilterTrajectory run_filter(ParticleCloud cloud, const std::vector<double>& dY, const FilterModel& m,
                                   std::size_t default_index, double tau, const CloudObserver& observe = {}) {
  const std::size_t n = dY.size();
  const double dt = m.dt();
  const bool want_ks = !m.options().test_functions.empty();
  FilterTrajectory tr;
  tr.dt = dt;
  tr.default_index = default_index;
  tr.tau = tau;
  tr.states.reserve(n + 1);
  tr.log_xi_particle.reserve(n + 1);
  if (want_ks) tr.ks.resize(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    const bool observed = k >= default_index;
    const double lambda = cloud.absorbed ? 0.0 : m.intensity(cloud);
    tr.log_xi_particle.push_back(cloud.log_normalizer);
    if (observe) observe(k, cloud);
    FilterState s;
    if (k < n) {
      s = step(cloud, dY[k], m, observed, want_ks ? &tr.ks[k] : nullptr);
      s.lambda = lambda;
    } else {
      // Final grid point: measure only.
      s.t = cloud.t;
      s.D = observed ? 0 : 1;
      s.Z = cloud.Z();
      s.lambda = lambda;
      if (!cloud.absorbed) {
        const double a = cloud.alive_mass();
        double bs = 0.0;
        for (std::size_t i = 0; i < cloud.size(); ++i)
          if (cloud.alive[i]) bs += cloud.w[i] * m.obs()(cloud.t, cloud.x[i]);
        s.bhat = bs / (a + cloud.dead_mass);
        s.theta = bs / a;
        s.bhat_G = observed ? 0.0 : s.theta;
        s.ess = cloud.ess();
        if (want_ks) {
          tr.ks[k].assign(m.options().test_functions.size(), KsMoments{});
          for (std::size_t j = 0; j < m.options().test_functions.size(); ++j) {
            const auto& tf = m.options().test_functions[j];
            auto& mo = tr.ks[k][j];
            mo.pi_f = pi_f(cloud, tf.f, true);
            mo.pi_Af = pi_f(cloud, [&](double x) { return m.drift()(x) * tf.df(x) + 0.5 * tf.d2f(x); }, true);
            mo.pi_fb = pi_f(cloud, [&](double x) { return tf.f(x) * m.obs()(cloud.t, x); }, true);
          }
        }
      }
    }
    tr.states.push_back(s);
  }
  tr.absorbed = cloud.absorbed;
  tr.resamples = cloud.resamples;

  // Compensators by the trapezoid rule; Lambda stops at tau with a partial step.
  tr.C.assign(n + 1, 0.0);
  tr.Lambda.assign(n + 1, 0.0);
  tr.int_lambda.assign(n + 1, 0.0);
  tr.L.assign(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& s0 = tr.states[k];
    const auto& s1 = tr.states[k + 1];
    const double trap = 0.5 * (s0.lambda + s1.lambda) * dt;
    tr.C[k + 1] = tr.C[k] + 0.5 * (s0.lambda * s0.Z + s1.lambda * s1.Z) * dt;
    tr.int_lambda[k + 1] = tr.int_lambda[k] + trap;
    double dl = 0.0;
    if (k + 1 < default_index) dl = trap;
    else if (k + 1 == default_index) dl = s0.lambda * std::clamp(tau - s0.t, 0.0, dt);
    tr.Lambda[k + 1] = tr.Lambda[k] + dl;
  }
  for (std::size_t k = 0; k <= n; ++k) tr.L[k] = tr.states[k].D - 1.0 + tr.Lambda[k];
  if (!tr.absorbed) std::tie(tr.xi, tr.kappa) = multiplicative_factors(tr);
  return tr;
}

/// Filter along a simulated scenario.
inline FilterTrajectory run_filter(const Scenario& sc, const InitialLaw& init, const FilterModel& m,
                                   const CloudObserver& observe = {}) {
  std::vector<double> dY(sc.steps());
  for (std::size_t k = 0; k < dY.size(); ++k) dY[k] = sc.Y[k + 1] - sc.Y[k];
  auto cloud = init_cloud(init, m.options().n_particles, m.options().seed, static_cast<std::uint32_t>(sc.path_id));
  return run_filter(std::move(cloud), dY, m, sc.default_index, sc.tau, observe);
}

/// max_k |Z - e^{-int lambda} kappa / xi| / Z.
inline double decomposition_gap(const FilterTrajectory& tr) {
  double g = 0.0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const double z = tr.states[k].Z;
    const double rep = std::exp(-tr.int_lambda[k]) * tr.kappa[k] / tr.xi[k];
    g = std::max(g, std::fabs(z - rep) / z);
  }
  return g;
}

/// R_t = pi_t f - pi_0 f - int pi(Af) ds - int (pi(fb) - pi f pi b) dbeta - int pi_{s-} f dL,
/// with pi the alive-conditioned filter before the observed default and
/// f(0) = b(t, 0) = 0 after it.
inline std::vector<double> ks_residual(const FilterTrajectory& tr, std::size_t j) {
  if (tr.ks.empty() || tr.ks.front().size() <= j) throw std::invalid_argument("trajectory has no moments for this test function");
  const std::size_t n = tr.size();
  auto moments = [&](std::size_t k) { return tr.states[k].D ? tr.ks[k][j] : KsMoments{}; };
  std::vector<double> r(n, 0.0);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const auto m0 = moments(k), m1 = moments(k + 1);
    const auto& s = tr.states[k];
    const double pib = s.D ? s.theta : 0.0;
    const double dL = tr.L[k + 1] - tr.L[k];
    r[k + 1] = r[k] + (m1.pi_f - m0.pi_f) - m0.pi_Af * tr.dt - (m0.pi_fb - m0.pi_f * pib) * s.dbeta - m0.pi_f * dL;
  }
  return r;
}

/// Z_t + C_t - sum bhat (1 - Z) dB^Y: the Azéma identity with the martingale
/// part of Z removed.
inline std::vector<double> azema_control_variate(const FilterTrajectory& tr) {
  std::vector<double> v(tr.size());
  double m = 0.0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    v[k] = tr.states[k].Z + tr.C[k] - m;
    const auto& s = tr.states[k];
    m += s.bhat * (1.0 - s.Z) * s.dB_Y;
  }
  return v;
}

inline void write_trajectory_csv(const FilterTrajectory& tr, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << std::setprecision(17) << "t,Z,lambda,bhat,bhat_G,ESS,xi,kappa,C,Lambda,D\n";
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const auto& s = tr.states[k];
    const double xi = tr.xi.empty() ? std::nan("") : tr.xi[k];
    const double ka = tr.kappa.empty() ? std::nan("") : tr.kappa[k];
    out << s.t << ',' << s.Z << ',' << s.lambda << ',' << s.bhat << ',' << s.bhat_G << ',' << s.ess << ',' << xi << ','
        << ka << ',' << tr.C[k] << ',' << tr.Lambda[k] << ',' << s.D << '\n';
  }
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace azema
