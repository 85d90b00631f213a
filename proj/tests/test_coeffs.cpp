#include "azema/coeffs.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

using namespace azema;

TEST_CASE("potential_A examples") {
  CHECK(potential_A(Drift::zero(), 5.0) == 0.0);
  CHECK(potential_A(Drift::affine(0.0, -1.0), 2.0) == -2.0);
  CHECK(potential_A(Drift::constant(1.0), 3.0) == 3.0);
}

TEST_CASE("potential_A matches the affine antiderivative at random points") {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 100; ++i) {
    const double alpha = u(gen), beta = u(gen), x = 4.0 * u(gen);
    CHECK(potential_A(Drift::affine(alpha, beta), x) == Catch::Approx(alpha * x + 0.5 * beta * x * x).margin(1e-12));
  }
}

TEST_CASE("potential_A of a tabulated drift") {
  const auto xs = linspace(0.0, 10.0, 201);
  std::vector<double> ys;
  for (double x : xs) ys.push_back(1.0 - 0.5 * x);
  const auto a = Drift::tabulated(xs, ys);
  CHECK(potential_A(a, 4.0) == Catch::Approx(4.0 - 4.0).margin(1e-9));
  CHECK(potential_A(a, 7.3) == Catch::Approx(7.3 - 0.25 * 7.3 * 7.3).margin(1e-9));
}

TEST_CASE("linear_growth_K examples") {
  const auto grid = default_validation_grid();
  CHECK(linear_growth_K(Drift::zero(), grid) == 0.0);
  CHECK(linear_growth_K(Drift::affine(0.0, -1.0), grid) == 1.0);
  CHECK(linear_growth_K(Drift::affine(2.0, -1.0), grid) == 2.0);
  CHECK_THROWS_AS(linear_growth_K(Drift::zero(), std::vector<double>{}), ConfigError);
}

TEST_CASE("linear_growth_K is permutation invariant and monotone under refinement") {
  const auto a = Drift::affine(0.3, -0.7);
  auto grid = linspace(0.0, 20.0, 101);
  const double k = linear_growth_K(a, grid);
  std::mt19937 gen(3);
  std::shuffle(grid.begin(), grid.end(), gen);
  CHECK(linear_growth_K(a, grid) == k);
  double prev = 0.0;
  for (std::size_t n : {11, 21, 41, 81, 161}) {
    const double kn = linear_growth_K(Drift::constant(0.5), linspace(0.0, 20.0, n));
    CHECK(kn >= prev);
    prev = kn;
  }
}

TEST_CASE("validate_drift: mean reversion passes") {
  const auto r = validate_drift(Drift::affine(0.0, -1.0), default_validation_grid());
  CHECK(r.passed());
  CHECK(r.sup_abs_derivative == 1.0);
  CHECK(r.a_at_infinity == Limit::minus_infinity);
  CHECK(r.K_a == 1.0);
  CHECK(r.c_f == 0.0);
  CHECK(r.f_a_nonpositive);
}

TEST_CASE("validate_drift: cubic drift fails the bounded-derivative clause") {
  const auto xs = linspace(0.0, 50.0, 2001);
  std::vector<double> ys;
  for (double x : xs) ys.push_back(x * x * x);
  const auto r = validate_drift(Drift::tabulated(xs, ys), default_validation_grid());
  CHECK_FALSE(r.bounded_derivative);
  CHECK_FALSE(r.passed());
}

TEST_CASE("validate_drift: constant drift passes with A -> inf") {
  const auto r = validate_drift(Drift::constant(1.0), default_validation_grid());
  CHECK(r.passed());
  CHECK(r.a_at_infinity == Limit::finite);
  CHECK(r.a_limit_value == 1.0);
  CHECK(r.A_at_infinity == Limit::plus_infinity);
}

TEST_CASE("validate_drift: tabulated mean reversion recovers K_a") {
  const auto xs = linspace(0.0, 50.0, 501);
  std::vector<double> ys;
  for (double x : xs) ys.push_back(0.5 - 2.0 * x);
  const auto r = validate_drift(Drift::tabulated(xs, ys), default_validation_grid());
  CHECK(r.passed());
  CHECK(r.K_a == Catch::Approx(2.0).epsilon(1e-9));
  CHECK(r.p < 1.95);
}

TEST_CASE("validate_drift rejects non-finite values") {
  const auto a = Drift::affine(0.0, -1.0);
  std::vector<double> grid{0.0, 1.0, std::nan("")};
  CHECK_THROWS(validate_drift(a, grid));
}

TEST_CASE("tabulated drift from file") {
  const auto path = std::filesystem::temp_directory_path() / "azema_drift_table.txt";
  {
    std::ofstream out(path);
    out << "# x a\n0 0\n1 -1\n2 -2\n3 -3\n";
  }
  const auto a = Drift::tabulated_file(path.string());
  CHECK(a(1.5) == Catch::Approx(-1.5));
  CHECK(a(10.0) == Catch::Approx(-10.0));
  std::filesystem::remove(path);
  CHECK_THROWS_AS(Drift::tabulated_file("/nonexistent/table.txt"), ConfigError);
}

TEST_CASE("observation invariants") {
  const auto b = Observation::clipped_linear(0.5, 4.0);
  CHECK(b(0.3, 0.0) == 0.0);
  CHECK(b(0.0, 2.0) == 1.0);
  CHECK(b(0.0, 100.0) == 2.0);
  CHECK(b.bounded());
  CHECK(validate_observation(b, 1.0, linspace(0.0, 50.0, 1001), 11).passed());
  CHECK(Observation::zero().is_zero());
}

TEST_CASE("initial laws") {
  CHECK(InitialLaw::point(1.0).sample(0.3) == 1.0);
  CHECK_THROWS_AS(InitialLaw::point(-1.0), ConfigError);
  CHECK_THROWS_AS(InitialLaw::tabulated({1.0, 2.0}, {0.5, 0.6}), ConfigError);
  const auto t = InitialLaw::tabulated({1.0, 2.0, 4.0}, {0.25, 0.5, 0.25});
  CHECK(t.mean() == Catch::Approx(2.25));
  CHECK(t.sample(0.1) == 1.0);
  CHECK(t.sample(0.5) == 2.0);
  CHECK(t.sample(0.9) == 4.0);
  const auto ln = InitialLaw::lognormal(0.0, 0.25);
  CHECK(ln.expect([](double x) { return x; }) == Catch::Approx(ln.mean()).epsilon(1e-8));
  CHECK(ln.second_moment() == Catch::Approx(std::exp(0.125)));
}
