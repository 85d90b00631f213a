#pragma once
// Euler-Maruyama paths of the firm value X, the observation Y and the default
// time tau, with Brownian-bridge hitting detection inside each step.

#include "azema/coeffs.hpp"
#include "azema/common.hpp"
#include "azema/parallel.hpp"
#include "azema/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

namespace azema {

struct SimConfig {
  double T = 1.0;
  double dt = 1e-3;
  std::size_t n_paths = 400;
  std::uint64_t seed = 1;
  Drift drift = Drift::affine(0.0, -1.0);
  Observation obs = Observation::clipped_linear(0.5, 4.0);
  InitialLaw init = InitialLaw::point(1.0);
  bool bridge_correction = true;
  double cell_budget = 4e10;  // max n_paths * steps per batch

  /// Grid steps; T / dt rounded to the nearest integer.
  std::size_t steps() const { return static_cast<std::size_t>(std::llround(T / dt)); }
  /// Step actually used, T / steps().
  double step() const { return T / static_cast<double>(steps()); }

  void validate() const {
    if (!(T > 0) || !std::isfinite(T)) throw ConfigError("scenario.T", "horizon must be positive and finite");
    if (!(dt > 0) || !(dt <= T)) throw ConfigError("scenario.dt", "step must satisfy 0 < dt <= T");
    if (std::fabs(static_cast<double>(steps()) * dt - T) > 1e-9 * T)
      throw ConfigError("scenario.dt", concat("T / dt = ", T / dt, " is not an integer"));
    if (steps() >= (std::size_t{1} << 31)) throw ConfigError("scenario.dt", "too many steps");
    if (n_paths < 1) throw ConfigError("scenario.n_paths", "need at least one path");
  }
};

/// P[a Brownian bridge from x0 to x1 over dt touches 0].
inline double bridge_hit_prob(double x0, double x1, double dt) {
  if (!(x0 > 0)) throw std::domain_error(concat("bridge_hit_prob needs x0 > 0, got ", x0));
  if (!(dt > 0)) throw std::domain_error("bridge_hit_prob needs dt > 0");
  if (x1 <= 0) return 1.0;
  return std::exp(-2.0 * x0 * x1 / dt);
}

/// One path on the grid t_k = k * dt, k = 0..n. X is stopped at 0 from the
/// first grid point after tau; Y keeps running with b(t, 0) = 0.
struct Scenario {
  std::size_t path_id = 0;
  double dt = 0.0;
  std::vector<double> X, Y;
  bool defaulted = false;
  double tau = kInf;
  std::size_t default_index = 0;  // first grid index with D = 0; n + 1 if none

  std::size_t steps() const { return X.size() - 1; }
  double time(std::size_t k) const { return dt * static_cast<double>(k); }
  /// D_{t_k} = 1{tau > t_k}.
  int D(std::size_t k) const { return k < default_index ? 1 : 0; }
};

namespace detail {
enum Channel : std::uint32_t { noise = 0, bridge_draw = 1 };
}

/// Simulates path `path_id`, calling visit(k, X_k, Y_k) at every grid point.
template <class Visit>
void simulate_path(const SimConfig& cfg, std::size_t path_id, Visit&& visit, bool& defaulted, double& tau,
                   std::size_t& default_index) {
  const std::size_t n = cfg.steps();
  const double dt = cfg.step();
  const double sq = std::sqrt(dt);
  const CounterRng rng(cfg.seed, Domain::scenario);
  const auto id = static_cast<std::uint32_t>(path_id);
  double x = cfg.init.sample(CounterRng(cfg.seed, Domain::init).uniforms(id, 0, 0, 0).u0);
  double y = 0.0;
  defaulted = false;
  tau = kInf;
  default_index = n + 1;
  visit(std::size_t{0}, x, y);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = dt * static_cast<double>(k);
    const auto u = rng.uniforms(id, static_cast<std::uint32_t>(k), 0, detail::noise);
    const double dw = sq * inverse_normal_cdf(u.u0);
    const double db = sq * inverse_normal_cdf(u.u1);
    y += db + cfg.obs(t, x) * dt;
    if (!defaulted) {
      const double nx = x + dw + cfg.drift(x) * dt;
      if (nx <= 0.0) {
        defaulted = true;
        tau = t + dt;
      } else if (cfg.bridge_correction &&
                 rng.uniforms(id, static_cast<std::uint32_t>(k), 0, detail::bridge_draw).u0 <
                     bridge_hit_prob(x, nx, dt)) {
        defaulted = true;
        tau = t + 0.5 * dt;
      }
      if (defaulted) {
        default_index = k + 1;
        x = 0.0;
      } else {
        x = nx;
      }
    }
    visit(k + 1, x, y);
  }
}

inline Scenario simulate_scenario(const SimConfig& cfg, std::size_t path_id) {
  cfg.validate();
  Scenario s;
  s.path_id = path_id;
  s.dt = cfg.step();
  s.X.resize(cfg.steps() + 1);
  s.Y.resize(cfg.steps() + 1);
  simulate_path(
      cfg, path_id,
      [&](std::size_t k, double x, double y) {
        s.X[k] = x;
        s.Y[k] = y;
      },
      s.defaulted, s.tau, s.default_index);
  return s;
}

/// Per-path summary kept for every path of a batch.
struct PathSummary {
  bool defaulted = false;
  double tau = kInf;
  std::vector<double> x_checkpoints;  // stopped X every `every` grid steps
};

struct BatchStats {
  std::size_t n_paths = 0;
  double default_freq = 0.0;
  double default_freq_se = 0.0;
  std::vector<double> tau_quantile_levels{0.1, 0.25, 0.5, 0.75, 0.9};
  std::vector<double> tau_quantiles;  // among defaulted paths; empty if none
  std::vector<double> checkpoint_times;
  std::vector<double> mean_x, second_moment_x;
};

struct ScenarioSet {
  SimConfig cfg;
  std::vector<PathSummary> summaries;
  std::vector<Scenario> scenarios;  // filled only when paths are kept
  BatchStats stats;
};

/// Fraction of paths with tau <= t.
inline SampleStats default_frequency(const ScenarioSet& set, double t) {
  std::vector<double> d(set.summaries.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = set.summaries[i].tau <= t ? 1.0 : 0.0;
  return sample_stats(d);
}

inline BatchStats batch_stats(const std::vector<PathSummary>& sums, double checkpoint_spacing) {
  BatchStats b;
  b.n_paths = sums.size();
  std::vector<double> d(sums.size()), taus;
  for (std::size_t i = 0; i < sums.size(); ++i) {
    d[i] = sums[i].defaulted ? 1.0 : 0.0;
    if (sums[i].defaulted) taus.push_back(sums[i].tau);
  }
  const auto s = sample_stats(d);
  b.default_freq = s.mean;
  b.default_freq_se = s.std_error;
  std::sort(taus.begin(), taus.end());
  if (!taus.empty())
    for (double q : b.tau_quantile_levels) {
      const double pos = q * static_cast<double>(taus.size() - 1);
      const auto lo = static_cast<std::size_t>(pos);
      const std::size_t hi = std::min(lo + 1, taus.size() - 1);
      b.tau_quantiles.push_back(taus[lo] + (pos - static_cast<double>(lo)) * (taus[hi] - taus[lo]));
    }
  const std::size_t nc = sums.empty() ? 0 : sums.front().x_checkpoints.size();
  for (std::size_t j = 0; j < nc; ++j) {
    std::vector<double> x(sums.size()), x2(sums.size());
    for (std::size_t i = 0; i < sums.size(); ++i) {
      x[i] = sums[i].x_checkpoints[j];
      x2[i] = x[i] * x[i];
    }
    b.checkpoint_times.push_back(checkpoint_spacing * static_cast<double>(j));
    b.mean_x.push_back(sample_stats(x).mean);
    b.second_moment_x.push_back(sample_stats(x2).mean);
  }
  return b;
}

/// Simulates cfg.n_paths paths. Path i depends only on (seed, i).
inline ScenarioSet simulate_batch(const SimConfig& cfg, bool keep_paths = false, std::size_t n_checkpoints = 10) {
  cfg.validate();
  const double cells = static_cast<double>(cfg.n_paths) * static_cast<double>(cfg.steps());
  if (cells > cfg.cell_budget)
    throw ConfigError("scenario.n_paths", concat("batch needs ", cells, " path-steps, budget is ", cfg.cell_budget));
  if (keep_paths && cells > 2e8)
    throw ConfigError("scenario.n_paths", concat("keeping ", cells, " path points exceeds the in-memory limit"));
  ScenarioSet set;
  set.cfg = cfg;
  set.summaries.resize(cfg.n_paths);
  if (keep_paths) set.scenarios.resize(cfg.n_paths);
  const std::size_t n = cfg.steps();
  const std::size_t every = std::max<std::size_t>(1, n / n_checkpoints);
  parallel_for(cfg.n_paths, [&](std::size_t i) {
    auto& sum = set.summaries[i];
    if (keep_paths) {
      set.scenarios[i] = simulate_scenario(cfg, i);
      const auto& s = set.scenarios[i];
      sum.defaulted = s.defaulted;
      sum.tau = s.tau;
      for (std::size_t k = 0; k <= n; k += every) sum.x_checkpoints.push_back(s.X[k]);
      return;
    }
    std::size_t idx = 0;
    simulate_path(
        cfg, i,
        [&](std::size_t k, double x, double) {
          if (k % every == 0) sum.x_checkpoints.push_back(x);
        },
        sum.defaulted, sum.tau, idx);
  });
  set.stats = batch_stats(set.summaries, cfg.step() * static_cast<double>(every));
  return set;
}

// ---------------------------------------------------------------------------
// Output.

inline void write_scenario_csv(const Scenario& s, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << std::setprecision(17) << "t,X,Y,D\n";
  for (std::size_t k = 0; k < s.X.size(); ++k)
    out << s.time(k) << ',' << s.X[k] << ',' << s.Y[k] << ',' << s.D(k) << '\n';
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

inline nlohmann::ordered_json to_json(const BatchStats& b) {
  nlohmann::ordered_json j;
  j["n_paths"] = b.n_paths;
  j["default_freq"] = b.default_freq;
  j["default_freq_stderr"] = b.default_freq_se;
  nlohmann::ordered_json q = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < b.tau_quantiles.size(); ++i)
    q[concat(b.tau_quantile_levels[i])] = b.tau_quantiles[i];
  j["tau_quantiles"] = q;
  j["checkpoint_times"] = b.checkpoint_times;
  j["mean_X"] = b.mean_x;
  j["second_moment_X"] = b.second_moment_x;
  return j;
}

inline void write_json(const nlohmann::ordered_json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace azema
