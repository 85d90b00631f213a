#include "azema/hitting.hpp"

#include <boost/math/distributions/normal.hpp>
#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

using namespace azema;

namespace {

// Independent Euler oracle: fraction of paths of dX = dW + a(X)dt started at x
// whose bridge-corrected hitting time lands in [lo, hi], divided by hi - lo.
template <class A>
std::pair<double, double> euler_bin_density(A a, double x, double lo, double hi, int n, double dt, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  const int steps = static_cast<int>(std::ceil(hi / dt));
  int hits = 0;
  for (int p = 0; p < n; ++p) {
    double v = x;
    for (int k = 0; k < steps; ++k) {
      const double nv = v + std::sqrt(dt) * z(gen) + a(v) * dt;
      const double t = (k + 0.5) * dt;
      if (nv <= 0 || u(gen) < std::exp(-2.0 * v * nv / dt)) {
        hits += (t >= lo && t < hi);
        break;
      }
      v = nv;
    }
  }
  const double p = static_cast<double>(hits) / n;
  return {p / (hi - lo), std::sqrt(p * (1 - p) / n) / (hi - lo)};
}

double bin_average(const std::function<double(double)>& ell, double lo, double hi) {
  return integrate(ell, lo, hi, 1e-12).value / (hi - lo);
}

}  // namespace

TEST_CASE("ell_bm closed form") {
  CHECK(ell_bm(1.0, 1.0) == Catch::Approx(0.24197072451914337).epsilon(1e-15));
  CHECK(ell_bm(1e-4, 1.0) < 1e-300);
  CHECK_THROWS_AS(ell_bm(0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(ell_bm(1.0, -1.0), std::domain_error);
  auto far = [](double v) { return v <= 0 ? 0.0 : 2.0 * ell_bm(1.0 / (v * v), 1.0) / (v * v * v); };
  const double mass = integrate([](double s) { return s <= 0 ? 0.0 : ell_bm(s, 1.0); }, 0.0, 1.0).value +
                      integrate(far, 0.0, 1.0).value;
  CHECK(mass == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("ell_bm agrees with a hitting-time histogram") {
  const auto [est, se] = euler_bin_density([](double) { return 0.0; }, 1.0, 0.9, 1.1, 100000, 1e-3, 11);
  const double want = bin_average([](double s) { return ell_bm(s, 1.0); }, 0.9, 1.1);
  CHECK(std::fabs(est - want) < 3 * se);
}

TEST_CASE("survival_bm") {
  boost::math::normal_distribution<double> n;
  CHECK(survival_bm(0.0, 3.0) == 1.0);
  CHECK(survival_bm(1.0, 1.0) == Catch::Approx(2 * boost::math::cdf(n, 1.0) - 1).epsilon(1e-15));
  CHECK(survival_bm(1.0, 1.0) == Catch::Approx(0.6826894921370859).epsilon(1e-15));
  CHECK(survival_bm(1e12, 1.0) < 1e-6);
  CHECK_THROWS_AS(survival_bm(1.0, 0.0), std::domain_error);
}

TEST_CASE("ell_drifted_bm") {
  CHECK(ell_drifted_bm(1.0, 1.0, 0.0) == Catch::Approx(ell_bm(1.0, 1.0)).epsilon(1e-15));
  CHECK(ell_drifted_bm(1.0, 1.0, 1.0) == Catch::Approx(0.24197072451914337 * std::exp(-1.5)).epsilon(1e-14));
  const auto [est, se] = euler_bin_density([](double) { return 1.0; }, 1.0, 0.9, 1.1, 100000, 1e-3, 12);
  CHECK(std::fabs(est - bin_average([](double s) { return ell_drifted_bm(s, 1.0, 1.0); }, 0.9, 1.1)) < 3 * se);
}

TEST_CASE("drifted density is defective with mass exp(-2cx)") {
  for (double c : {0.5, 1.0}) {
    auto near = [c](double s) { return s <= 0 ? 0.0 : ell_drifted_bm(s, 1.0, c); };
    const double mass = integrate(near, 0.0, 1.0).value + integrate(near, 1.0, 40.0).value +
                        integrate(near, 40.0, 400.0).value;
    CHECK(mass == Catch::Approx(std::exp(-2.0 * c)).margin(1e-9));
  }
}

TEST_CASE("ell_ou") {
  CHECK(ell_ou(1.0, 1.0, 1e-9) == Catch::Approx(ell_bm(1.0, 1.0)).margin(1e-6));
  for (double t : {1e-2, 1e-3, 1e-4}) CHECK(ell_ou(t, 0.05, 1.0) / ell_bm(t, 0.05) == Catch::Approx(1.0).margin(0.03));
  // Time change: OU hitting density = BM density on the clock v(t) times dv/dt.
  for (double k : {0.3, 1.0, 2.5})
    for (double t : {0.1, 1.0, 3.0}) {
      const double v = std::expm1(2 * k * t) / (2 * k);
      CHECK(ell_ou(t, 1.3, k) == Catch::Approx(ell_bm(v, 1.3) * std::exp(2 * k * t)).epsilon(1e-12));
    }
  CHECK(std::isfinite(ell_ou(200.0, 1.0, 5.0)));
  CHECK(ell_ou(200.0, 1.0, 5.0) >= 0.0);
  const auto [est, se] = euler_bin_density([](double x) { return -x; }, 1.0, 0.9, 1.1, 100000, 1e-3, 13);
  CHECK(std::fabs(est - bin_average([](double s) { return ell_ou(s, 1.0, 1.0); }, 0.9, 1.1)) < 3 * se);
}

TEST_CASE("closed-form survivals integrate their densities") {
  const std::vector<HittingModel> models{HittingModel::bm(), HittingModel::drifted_bm(0.7),
                                         HittingModel::drifted_bm(-0.4), HittingModel::ou(1.0)};
  for (const auto& m : models)
    for (double x : {0.3, 1.0, 2.0})
      for (double t : {0.05, 0.5, 2.0}) {
        const double q = integrate([&](double s) { return s <= 0 ? 0.0 : m.density(s, x); }, 0.0, t, 1e-10).value;
        CHECK(m.default_probability(t, x) == Catch::Approx(q).margin(1e-10));
      }
}

TEST_CASE("survival is monotone in t and x") {
  for (const auto& m : {HittingModel::bm(), HittingModel::drifted_bm(1.0), HittingModel::ou(1.0)}) {
    CHECK(m.survival(0.0, 1.0) == 1.0);
    for (double x : {0.25, 1.0, 3.0}) {
      double prev = 1.0;
      for (double t : logspace(1e-3, 10.0, 40)) {
        const double h = m.survival(t, x);
        CHECK(h <= prev);
        CHECK(h > 0.0);
        CHECK(m.survival(t, x * 1.1) >= h);
        prev = h;
      }
    }
  }
}

TEST_CASE("default probability stays accurate near the barrier") {
  CHECK(default_prob_bm(1e-3, 0.5) > 0.0);
  CHECK(default_prob_bm(1e-3, 0.5) == Catch::Approx(std::erfc(0.5 / std::sqrt(2e-3))).epsilon(1e-14));
  CHECK(default_prob_drifted_bm(1e-3, 0.2, -3.0) > 0.0);
  CHECK(std::isfinite(default_prob_drifted_bm(1.0, 5.0, -20.0)));
  CHECK(default_prob_drifted_bm(1.0, 5.0, -20.0) <= 1.0);
}

TEST_CASE("for_drift picks the closed form") {
  CHECK(HittingModel::for_drift(Drift::zero()).name() == "bm_closed");
  CHECK(HittingModel::for_drift(Drift::constant(1.0)).name().starts_with("drifted_bm_closed"));
  CHECK(HittingModel::for_drift(Drift::affine(0.0, -2.0)).name().starts_with("ou_closed"));
  CHECK(HittingModel::for_drift(Drift::affine(1.0, -2.0)).name() == "bessel_bridge_mc");
}

TEST_CASE("bridge MC with zero drift is exact") {
  const auto r = ell_bridge_mc(Drift::zero(), 0.7, 1.2);
  CHECK(r.estimate == ell_bm(0.7, 1.2));
  CHECK(r.std_error == 0.0);
  CHECK_THROWS_AS(ell_bridge_mc(Drift::zero(), 1.0, 1.0, {.n_bridges = 999}), std::invalid_argument);
}

TEST_CASE("bridge MC reproduces the OU and drifted closed forms") {
  const auto ou = ell_bridge_mc(Drift::affine(0.0, -1.0), 1.0, 1.0, {.n_bridges = 20000, .seed = 3});
  CHECK(std::fabs(ou.estimate - ell_ou(1.0, 1.0, 1.0)) < 3 * ou.std_error);
  const auto dr = ell_bridge_mc(Drift::constant(1.0), 1.0, 1.0, {.n_bridges = 20000, .seed = 4});
  // Constant drift: the bridge functional is deterministic up to rounding.
  CHECK(dr.estimate == Catch::Approx(ell_drifted_bm(1.0, 1.0, 1.0)).epsilon(1e-12));
}

TEST_CASE("bridge MC is stable under doubling the bridge grid") {
  const Drift a = Drift::affine(0.5, -1.0);
  const auto coarse = ell_bridge_mc(a, 1.0, 0.8, {.n_bridges = 20000, .bridge_steps = 129, .seed = 5});
  const auto fine = ell_bridge_mc(a, 1.0, 0.8, {.n_bridges = 20000, .bridge_steps = 257, .seed = 5});
  CHECK(std::fabs(coarse.estimate - fine.estimate) < 3 * std::hypot(coarse.std_error, fine.std_error));
}

TEST_CASE("bridge MC is independent of the worker count") {
  setenv("AZEMA_THREADS", "1", 1);
  const auto one = ell_bridge_mc(Drift::affine(0.0, -1.0), 0.5, 1.0, {.seed = 8});
  setenv("AZEMA_THREADS", "3", 1);
  const auto three = ell_bridge_mc(Drift::affine(0.0, -1.0), 0.5, 1.0, {.seed = 8});
  unsetenv("AZEMA_THREADS");
  CHECK(one.estimate == three.estimate);
  CHECK(one.std_error == three.std_error);
}

TEST_CASE("density table round trip and interpolation") {
  const auto ts = logspace(1e-3, 5.0, 60);
  const auto xs = linspace(0.05, 4.0, 80);
  std::vector<double> vals;
  for (double t : ts)
    for (double x : xs) vals.push_back(ell_ou(t, x, 1.0));
  const DensityTable table(ts, xs, vals);
  const auto path = std::filesystem::temp_directory_path() / "azema_density_table.txt";
  table.save(path.string());
  const auto back = DensityTable::load(path.string());
  std::filesystem::remove(path);
  CHECK(back.values() == table.values());
  CHECK(back.ts() == table.ts());
  CHECK(table.density(1.0, 1.0) == Catch::Approx(ell_ou(1.0, 1.0, 1.0)).epsilon(0.02));
  CHECK(table.default_probability(2.0, 1.0) == Catch::Approx(default_prob_ou(2.0, 1.0, 1.0)).margin(5e-3));

  const auto m = HittingModel::bridge_mc(Drift::affine(0.0, -1.0), {}, std::make_shared<DensityTable>(table));
  CHECK(m.survival(2.0, 1.0) == Catch::Approx(survival_ou(2.0, 1.0, 1.0)).margin(5e-3));
  CHECK_THROWS_AS(HittingModel::bridge_mc(Drift::affine(0.0, -1.0)).survival(1.0, 1.0), std::logic_error);
}

TEST_CASE("delta constant") {
  CHECK(detail::delta_integrand(1e-9) == Catch::Approx(1.0).epsilon(1e-8));
  CHECK(detail::delta_integrand(1.0) == Catch::Approx(1.0 / (std::exp(1.0 / 6) - std::exp(-5.0 / 6))).epsilon(1e-14));
  CHECK(detail::delta_integrand(1.0) == Catch::Approx(1.339114371567521).epsilon(1e-14));
  // Bounded scalar maximization oracle (precomputed, Brent).
  CHECK(delta_constant() == Catch::Approx(2.2130293828462633).epsilon(1e-12));
}

TEST_CASE("inverse-time moment bounds") {
  const double delta = delta_constant();
  const auto bm = HittingModel::bm();
  for (double x : {0.25, 0.5, 1.0, 2.0, 4.0})
    CHECK(inverse_time_moment(bm, x).value == Catch::Approx(1.0 / (x * x)).margin(1e-8));
  // With a killing rate K^2/2 the same moment equals (1 + Kx) e^{-Kx} / x^2.
  for (double k : {0.5, 2.0}) {
    auto near = [k](double s) { return s <= 0 ? 0.0 : std::exp(-k * k * s / 2) * ell_bm(s, 2.0) / s; };
    const double v = integrate(near, 0.0, 4.0, 1e-12).value + integrate(near, 4.0, 400.0, 1e-12).value;
    CHECK(v == Catch::Approx((1 + 2 * k) * std::exp(-2 * k) / 4).margin(1e-9));
  }

  const std::vector<double> xs{0.25, 0.5, 1.0, 2.0, 4.0};
  const auto rep0 = check_bounds(bm, xs, 10.0);
  CHECK(rep0.all_hold());
  CHECK(rep0.K_g == 0.0);
  CHECK(rep0.rows[2].rhs == Catch::Approx(2 * std::pow(delta, 1.5)));
  CHECK(rep0.sup_finite());
  CHECK(rep0.sup_relative_change() < 0.01);

  const auto rep1 = check_bounds(HittingModel::ou(1.0), xs, 10.0);
  CHECK(rep1.all_hold());
  CHECK(rep1.K_g == 1.0);
  CHECK(rep1.rows[2].rhs == Catch::Approx(2 * std::pow(delta, 1.5) * 2));
  CHECK(rep1.sup_relative_change() < 0.01);
}
