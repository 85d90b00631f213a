#include "azema/parallel.hpp"
#include "azema/rng.hpp"

#include <boost/math/distributions/normal.hpp>
#include <catch_amalgamated.hpp>

#include <set>

using namespace azema;

TEST_CASE("philox known-answer vectors") {
  using C = Philox4x32::Counter;
  using K = Philox4x32::Key;
  CHECK(Philox4x32::apply(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(Philox4x32::apply(C{~0u, ~0u, ~0u, ~0u}, K{~0u, ~0u}) ==
        C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(Philox4x32::apply(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, K{0xa4093822u, 0x299f31d0u}) ==
        C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("open unit interval endpoints") {
  CHECK(bits_to_open_unit(0) > 0.0);
  CHECK(bits_to_open_unit(~0ull) < 1.0);
}

TEST_CASE("inverse normal matches boost quantile") {
  boost::math::normal_distribution<double> n;
  for (double p : {1e-300, 1e-20, 1e-8, 0.01, 0.2, 0.425, 0.5, 0.6, 0.925, 0.999, 1 - 1e-12}) {
    const double want = boost::math::quantile(n, p);
    CHECK(inverse_normal_cdf(p) == Catch::Approx(want).epsilon(1e-14).margin(1e-14));
  }
  CHECK(normal_cdf(1.0) == Catch::Approx(boost::math::cdf(n, 1.0)).epsilon(1e-15));
  CHECK(normal_sf(10.0) == Catch::Approx(boost::math::cdf(boost::math::complement(n, 10.0))).epsilon(1e-13));
}

TEST_CASE("streams are pure functions of their counter") {
  const CounterRng a(42, Domain::scenario), b(42, Domain::scenario), c(42, Domain::particle), d(43, Domain::scenario);
  const auto x = a.uniforms(7, 3, 0, 1);
  CHECK(x.u0 == b.uniforms(7, 3, 0, 1).u0);
  CHECK(x.u0 != c.uniforms(7, 3, 0, 1).u0);
  CHECK(x.u0 != d.uniforms(7, 3, 0, 1).u0);
  CHECK(x.u0 != a.uniforms(7, 3, 0, 2).u0);
  CHECK(a.seed() == 42);
}

TEST_CASE("normals have unit moments") {
  const CounterRng r(9, Domain::scenario);
  constexpr int n = 200000;
  std::vector<double> z(n), z2(n);
  for (int i = 0; i < n; ++i) {
    z[i] = r.normal(static_cast<std::uint32_t>(i), 0, 0, 0);
    z2[i] = z[i] * z[i];
  }
  const auto s = sample_stats(z);
  const auto s2 = sample_stats(z2);
  CHECK(std::fabs(s.mean) < 4 * s.std_error);
  CHECK(std::fabs(s2.mean - 1.0) < 4 * s2.std_error);
}

TEST_CASE("derived seeds differ") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t salt = 0; salt < 1000; ++salt) seen.insert(derive_seed(1, salt));
  CHECK(seen.size() == 1000);
}

TEST_CASE("parallel_for result is independent of worker count") {
  std::vector<double> one(1000), four(1000);
  auto fill = [](std::vector<double>& v) {
    return [&v](std::size_t i) { v[i] = CounterRng(5, Domain::init).uniforms(static_cast<std::uint32_t>(i), 0, 0, 0).u0; };
  };
  parallel_for(one.size(), fill(one), 1);
  parallel_for(four.size(), fill(four), 4);
  CHECK(one == four);
  CHECK(pairwise_sum(one) == pairwise_sum(four));
}

TEST_CASE("parallel_for propagates exceptions") {
  CHECK_THROWS_AS(parallel_for(
                      100,
                      [](std::size_t i) {
                        if (i == 37) throw std::runtime_error("boom");
                      },
                      3),
                  std::runtime_error);
}
