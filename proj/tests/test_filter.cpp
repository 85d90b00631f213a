#include "azema/filter.hpp"
#include "azema/simulate.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <algorithm>
#include <random>

using namespace azema;

namespace {

constexpr double kPhiNorm = 0.3989422804014327;  // 1 / sqrt(2 pi)

/// Weighted grid cloud carrying the law of a Brownian motion started at x0,
/// killed at 0 and observed alive at time t: density
/// phi((x - x0) / sqrt t) - phi((x + x0) / sqrt t) on (0, inf).
ParticleCloud killed_bm_cloud(double x0, double t, std::size_t n, double x_max) {
  ParticleCloud c;
  const double h = x_max / static_cast<double>(n);
  const double s = std::sqrt(t);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = (static_cast<double>(i) + 0.5) * h;
    const double d = kPhiNorm * (std::exp(-0.5 * (x - x0) * (x - x0) / t) - std::exp(-0.5 * (x + x0) * (x + x0) / t)) / s;
    c.x.push_back(x);
    c.w.push_back(d * h);
    c.alive.push_back(1);
    total += d * h;
  }
  for (double& w : c.w) w /= total;
  return c;
}

FilterModel model(const Drift& a, const Observation& b, double dt, std::size_t n, std::uint64_t seed = 3) {
  FilterOptions o;
  o.n_particles = n;
  o.seed = seed;
  return FilterModel(a, b, HittingModel::for_drift(a), dt, o);
}

}  // namespace

TEST_CASE("init_cloud") {
  try {
    init_cloud(InitialLaw::point(1.0), 10, 1);
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "filter.n_particles");
  }
  const auto c = init_cloud(InitialLaw::point(1.0), 1000, 1);
  CHECK(std::all_of(c.x.begin(), c.x.end(), [](double x) { return x == 1.0; }));
  CHECK(c.Z() == 1.0);
  CHECK(c.ess() == Catch::Approx(1000.0));
  const auto law = InitialLaw::tabulated({0.5, 1.0, 2.0}, {0.2, 0.5, 0.3});
  const auto t = init_cloud(law, 20000, 5);
  const double m = pi_f(t, [](double x) { return x; });
  const double sd = std::sqrt(law.second_moment() - law.mean() * law.mean());
  CHECK(std::fabs(m - law.mean()) < 3 * sd / std::sqrt(20000.0));
}

TEST_CASE("pi_f normalization and dead convention") {
  auto c = init_cloud(InitialLaw::lognormal(0.0, 0.3), 500, 2);
  CHECK(pi_f(c, [](double) { return 1.0; }) == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(pi_f(c, [](double) { return 0.0; }) == 0.0);
  for (std::size_t i = 0; i < 100; ++i) {
    c.dead_mass += c.w[i];
    c.w[i] = 0.0;
    c.alive[i] = 0;
  }
  CHECK(pi_f(c, [](double) { return 1.0; }) == Catch::Approx(1.0).epsilon(1e-14));
  CHECK(c.Z() == Catch::Approx(0.8).epsilon(1e-12));
  // f(0) = 0 for dead particles: full mean = Z * alive mean.
  const double full = pi_f(c, [](double x) { return x; });
  const double alive = pi_f(c, [](double x) { return x; }, true);
  CHECK(full == Catch::Approx(c.Z() * alive).epsilon(1e-12));
  CHECK_THROWS_AS(pi_f(c, [](double) { return std::nan(""); }), NumericError);
}

TEST_CASE("Intensity of the killed Brownian law at t = 1") {
  // lambda_1 = l(1, 1) / H(1, 1) = 0.2419707 / 0.6826895
  const double want = ell_bm(1.0, 1.0) / survival_bm(1.0, 1.0);
  CHECK(want == Catch::Approx(0.354437).margin(1e-6));
  const auto c = killed_bm_cloud(1.0, 1.0, 200000, 10.0);
  const auto h = HittingModel::bm();
  CHECK(intensity(c, h, 1e-3) == Catch::Approx(want).epsilon(2e-3));
  // eps sweep: Richardson values are Cauchy within 1% of lambda.
  const double a = intensity(c, h, 1e-2), b = intensity(c, h, 5e-3), d = intensity(c, h, 2.5e-3);
  CHECK(std::fabs(a - b) < 1e-2 * want);
  CHECK(std::fabs(b - d) < 1e-2 * want);
  CHECK(std::fabs(d - want) < std::fabs(intensity(c, h, 2.5e-3, false) - want));
  CHECK_THROWS_AS(intensity(c, h, 0.0), ConfigError);
}

TEST_CASE("Intensity is nonnegative on random clouds") {
  std::mt19937_64 gen(9);
  std::exponential_distribution<double> e(3.0);
  const auto h = HittingModel::ou(1.0);
  for (int r = 0; r < 20; ++r) {
    ParticleCloud c;
    for (int i = 0; i < 200; ++i) {
      c.x.push_back(e(gen));
      c.w.push_back(1.0 / 200);
      c.alive.push_back(1);
    }
    CHECK(intensity(c, h, 0.01) >= 0.0);
    const FilterModel m(Drift::affine(0, -1), Observation::zero(), h, 1e-3, FilterOptions{});
    CHECK(m.intensity(c) >= 0.0);
    CHECK(m.intensity(c) == Catch::Approx(intensity(c, h, 0.01)).epsilon(1e-3));
  }
}

TEST_CASE("eps below the density-table resolution is rejected") {
  BridgeOptions o;
  o.n_bridges = 1000;
  o.bridge_steps = 16;
  const auto a = Drift::affine(0.2, -0.5);
  auto table = std::make_shared<const DensityTable>(build_density_table(a, logspace(1e-2, 1.0, 8), linspace(0.1, 3.0, 8), o));
  const auto h = HittingModel::for_drift(a, table);
  const auto c = init_cloud(InitialLaw::point(1.0), 100, 1);
  try {
    intensity(c, h, 1e-3);
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "filter.eps");
  }
  FilterOptions fo;
  fo.eps = 1e-3;
  CHECK_THROWS_AS(FilterModel(a, Observation::zero(), h, 1e-4, fo), ConfigError);
}

TEST_CASE("Default-conditional reweighting") {
  const auto h = HittingModel::bm();
  const auto point = init_cloud(InitialLaw::point(0.7), 100, 1);
  const auto same = default_conditional_cloud(point, h, 0.01);
  for (std::size_t i = 0; i < 100; ++i) CHECK(same.w[i] == Catch::Approx(point.w[i]).epsilon(1e-12));
  const auto c = killed_bm_cloud(1.0, 1.0, 20000, 8.0);
  double prev = kInf;
  for (double eps : {0.1, 0.03, 0.01, 0.003}) {
    const auto d = default_conditional_cloud(c, h, eps);
    CHECK(pi_f(d, [](double) { return 1.0; }) == Catch::Approx(1.0).epsilon(1e-12));
    const double m = pi_f(d, [](double x) { return x; });
    CHECK(m < prev);
    prev = m;
  }
  CHECK_THROWS_AS(default_conditional_cloud(init_cloud(InitialLaw::point(50.0), 100, 1), h, 1e-4), NumericError);
}

TEST_CASE("Single step without observation information matches survival") {
  const auto m = model(Drift::zero(), Observation::zero(), 0.01, 10000);
  auto c = init_cloud(InitialLaw::point(0.1), 10000, 4);
  step(c, 0.0, m);
  const double p = survival_bm(0.01, 0.1);
  CHECK(std::fabs(c.Z() - p) < 3 * std::sqrt(p * (1 - p) / 10000));
  auto far = init_cloud(InitialLaw::point(1.0), 10000, 4);
  step(far, 0.0, m);
  CHECK(far.Z() == Catch::Approx(survival_bm(0.01, 1.0)).margin(1e-9));
}

TEST_CASE("b = 0: Z follows the prior survival curve, xi = kappa = 1") {
  const auto a = Drift::affine(0.0, -1.0);
  const auto m = model(a, Observation::zero(), 1e-3, 10000);
  auto c = init_cloud(InitialLaw::point(0.6), 10000, 8);
  std::vector<double> dY(1000, 0.0);
  const auto tr = run_filter(c, dY, m, dY.size() + 1, kInf);
  for (std::size_t k : {250u, 500u, 1000u}) {
    const double p = survival_ou(1e-3 * k, 0.6, 1.0);
    CHECK(std::fabs(tr.states[k].Z - p) < 4 * std::sqrt(p * (1 - p) / 10000));
  }
  for (std::size_t k = 0; k < tr.size(); ++k) {
    CHECK(tr.xi[k] == 1.0);
    CHECK(tr.kappa[k] == 1.0);
    CHECK(tr.states[k].bhat == 0.0);
  }
  // Innovations equal the raw increments.
  CHECK(tr.states[10].dB_Y == 0.0);
}

TEST_CASE("Observation tilts the posterior") {
  const auto b = Observation::linear(1.0);
  const auto m = model(Drift::zero(), b, 0.01, 2000);
  int up = 0;
  for (std::uint64_t r = 0; r < 200; ++r) {
    auto c = init_cloud(InitialLaw::lognormal(0.0, 0.5), 2000, r + 1);
    auto base = c;
    step(c, 0.3, m);
    step(base, 0.0, model(Drift::zero(), Observation::zero(), 0.01, 2000, r + 1));
    const double tilted = pi_f(c, [](double x) { return x; }, true);
    const double flat = pi_f(base, [](double x) { return x; }, true);
    up += tilted > flat;
  }
  CHECK(up >= 190);
}

TEST_CASE("Resampling keeps Z and equalizes weights") {
  const auto m = model(Drift::zero(), Observation::linear(2.0), 0.01, 1000);
  auto c = init_cloud(InitialLaw::lognormal(-0.5, 0.6), 1000, 2);
  for (int k = 0; k < 30 && c.resamples == 0; ++k) step(c, 0.25, m);
  REQUIRE(c.resamples > 0);
  auto d = c;
  const double z = d.Z();
  resample_alive(d);
  CHECK(d.Z() == Catch::Approx(z).epsilon(1e-12));
  CHECK(d.ess() == Catch::Approx(static_cast<double>(d.size())).epsilon(1e-9));
  CHECK(d.alive_count() == d.size());
}

TEST_CASE("Particle normalizer tracks the exponential formula for xi") {
  // Unnormalized total mass against exp(int bhat dY - 1/2 int bhat^2 ds).
  const auto m = model(Drift::affine(0.0, -1.0), Observation::clipped_linear(0.5, 4.0), 1e-3, 2000);
  SimConfig sc;
  sc.seed = 12;
  for (std::size_t id = 0; id < 5; ++id) {
    const auto tr = run_filter(simulate_scenario(sc, id), sc.init, m);
    REQUIRE_FALSE(tr.absorbed);
    for (std::size_t k = 0; k < tr.size(); k += 100)
      CHECK(std::fabs(tr.log_xi_particle[k] - std::log(tr.xi[k])) < 0.02);
  }
}

TEST_CASE("Trajectory invariants on the default scenario") {
  SimConfig sc;
  sc.n_paths = 1;
  sc.seed = 77;
  sc.init = InitialLaw::point(0.5);
  const auto m = model(sc.drift, sc.obs, sc.step(), 2000);
  std::size_t checked_default = 0;
  for (std::size_t id = 0; id < 12; ++id) {
    const auto s = simulate_scenario(sc, id);
    const auto tr = run_filter(s, sc.init, m);
    if (tr.absorbed) continue;
    for (std::size_t k = 0; k < tr.size(); ++k) {
      CHECK(tr.states[k].Z > 0.0);
      CHECK(tr.states[k].Z <= 1.0);
      CHECK(tr.states[k].lambda >= 0.0);
      CHECK(tr.xi[k] > 0.0);
      CHECK(tr.kappa[k] > 0.0);
      if (k > 0) CHECK(tr.C[k] >= tr.C[k - 1]);
    }
    CHECK(decomposition_gap(tr) < 0.1);
    if (s.defaulted) {
      ++checked_default;
      const std::size_t d = s.default_index;
      CHECK(tr.states[d - 1].D == 1);
      CHECK(tr.states[d].D == 0);
      const double jump = (tr.L[d] - tr.L[d - 1]) - (tr.Lambda[d] - tr.Lambda[d - 1]);
      CHECK(jump == Catch::Approx(-1.0).epsilon(1e-12));
      CHECK(tr.states[d].bhat_G == 0.0);
      CHECK(tr.Lambda.back() == tr.Lambda[d]);
    }
    CHECK(tr.L.front() == 0.0);
  }
  CHECK(checked_default > 0);
}

TEST_CASE("KS residual: R_0 = 0 and mean zero with b = 0") {
  CHECK_THROWS_AS(bump(0.5, 0.6), ConfigError);
  const auto tf = bump(1.0, 0.8);
  CHECK(tf.f(1.0) == Catch::Approx(std::exp(-1.0)));
  // Derivatives against central differences.
  for (double x : {0.5, 0.9, 1.3, 1.7}) {
    const double h = 1e-5;
    CHECK(tf.df(x) == Catch::Approx((tf.f(x + h) - tf.f(x - h)) / (2 * h)).epsilon(1e-6));
    CHECK(tf.d2f(x) == Catch::Approx((tf.df(x + h) - tf.df(x - h)) / (2 * h)).epsilon(1e-5));
  }
  SimConfig sc;
  sc.dt = 4e-3;
  sc.obs = Observation::zero();
  sc.seed = 3;
  FilterOptions o;
  o.n_particles = 1000;
  o.test_functions = {tf};
  const FilterModel m(sc.drift, sc.obs, HittingModel::for_drift(sc.drift), sc.step(), o);
  std::vector<double> rt;
  for (std::size_t id = 0; id < 300; ++id) {
    const auto tr = run_filter(simulate_scenario(sc, id), sc.init, m);
    const auto r = ks_residual(tr, 0);
    CHECK(r.front() == 0.0);
    rt.push_back(r.back());
  }
  const auto st = sample_stats(rt);
  CHECK(std::fabs(st.mean) < 3 * st.std_error);
  CHECK_THROWS(ks_residual(run_filter(simulate_scenario(sc, 0), sc.init, model(sc.drift, sc.obs, sc.step(), 200)), 0));
}

TEST_CASE("Trajectory CSV layout") {
  const auto m = model(Drift::zero(), Observation::linear(0.5), 0.01, 200);
  SimConfig sc;
  sc.dt = 0.01;
  sc.drift = Drift::zero();
  sc.obs = Observation::linear(0.5);
  const auto tr = run_filter(simulate_scenario(sc, 0), sc.init, m);
  const auto path = (std::filesystem::temp_directory_path() / "azema_traj.csv").string();
  write_trajectory_csv(tr, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,Z,lambda,bhat,bhat_G,ESS,xi,kappa,C,Lambda,D");
}
