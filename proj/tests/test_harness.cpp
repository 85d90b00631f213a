#include "azema/harness.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace azema;

namespace {

std::string field_of(const std::string& text) {
  try {
    parse_config(json::parse(text));
  } catch (const ConfigError& e) {
    return e.field();
  }
  return {};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::filesystem::path kConfigs = AZEMA_SOURCE_DIR "/configs";

}  // namespace

TEST_CASE("Config errors name the offending field") {
  CHECK(field_of(R"({})").empty());
  CHECK(field_of(R"({"scenario": {"dt": -1e-3}})") == "scenario.dt");
  CHECK(field_of(R"({"scenario": {"dt": 0.3}})") == "scenario.dt");
  CHECK(field_of(R"({"scenario": {"n_paths": 0}})") == "scenario.n_paths");
  CHECK(field_of(R"({"scenario": {"n_paths": -4}})") == "scenario.n_paths");
  CHECK(field_of(R"({"scenario": {"n_paths": "many"}})") == "scenario.n_paths");
  CHECK(field_of(R"({"scenario": {"dtt": 0.01}})") == "scenario.dtt");
  CHECK(field_of(R"({"colour": 1})") == "colour");
  CHECK(field_of(R"({"scenario": {"drift": {"kind": "cubic"}}})") == "scenario.drift.kind");
  CHECK(field_of(R"({"scenario": {"drift": {"kind": "affine", "gamma": 1}}})") == "scenario.drift.gamma");
  CHECK(field_of(R"({"filter": {"n_particles": 10}})") == "filter.n_particles");
  CHECK(field_of(R"({"filter": {"richardson": 1}})") == "filter.richardson");
  CHECK(field_of(R"({"pricing": {"t": 2.0}})") == "pricing.t");
  CHECK(field_of(R"({"pricing": {"T": 3.0}})") == "pricing.T");
  CHECK(field_of(R"({"suites": ["identity", "astrology"]})") == "suites");
  CHECK(field_of(R"({"scenario": {"report_times": [0.5, 2.0]}})") == "scenario.report_times");
  CHECK(field_of(R"({"scenario": {"init": {"kind": "point", "x0": -1}}})") == "init.x0");
  CHECK(field_of(R"({"scenario": []})") == "scenario");
}

TEST_CASE("Shipped configs load") {
  for (const char* name : {"default.json", "smoke.json", "baseline_b0.json"}) {
    INFO(name);
    CHECK_NOTHROW(load_config((kConfigs / name).string()));
  }
  const auto c = load_config((kConfigs / "default.json").string());
  CHECK(c.scenario.T == 1.0);
  CHECK(c.scenario.dt == 1e-3);
  CHECK(c.scenario.drift(2.0) == -2.0);
  CHECK(c.scenario.obs(0.0, 10.0) == 2.0);
  try {
    load_config("/nonexistent/config.json");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "config");
  }
}

TEST_CASE("Sigma checks rerun once with doubled samples") {
  Tolerances tol;
  int calls = 0;
  auto c = detail::sigma_check("s", "n", "m", 0.0, tol, [&](int scale) {
    ++calls;
    return scale == 1 ? Measurement{0.5, 0.1} : Measurement{0.3, 0.1};
  });
  CHECK(calls == 2);
  CHECK(c.rerun);
  CHECK(c.passed);
  CHECK(c.hi == Catch::Approx(0.4));
  calls = 0;
  c = detail::sigma_check("s", "n", "m", 0.0, tol, [&](int) {
    ++calls;
    return Measurement{0.2, 0.1};
  });
  CHECK(calls == 1);
  CHECK_FALSE(c.rerun);
  tol.rerun = false;
  c = detail::sigma_check("s", "n", "m", 0.0, tol, [&](int) { return Measurement{0.5, 0.1}; });
  CHECK_FALSE(c.passed);
  CHECK_FALSE(detail::band_check("s", "n", "m", std::nan(""), 0, 1).passed);
}

TEST_CASE("Report emission") {
  SuiteReport r;
  r.checks.push_back(detail::band_check("identity", "identity A at t=0.5", "filter", 1.001, 0.99, 1.01, 0.003));
  r.checks.push_back(detail::band_check("rebate", "R, with \"quotes\"", "pricing", 0.2, 0.0, 0.1));
  r.checks[0].runtime = 1.5;
  CHECK_FALSE(r.passed());
  const auto dir = std::filesystem::temp_directory_path() / "azema_test_harness";
  std::filesystem::remove_all(dir);
  emit(r, "json", (dir / "a.json").string());
  r.checks[0].runtime = 99.0;
  emit(r, "json", (dir / "b.json").string());
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  const auto j = json::parse(slurp(dir / "a.json"));
  CHECK(j["passed"] == false);
  CHECK(j["checks"].size() == 2);
  CHECK(j["checks"][0]["statistic"] == 1.001);

  emit(r, "csv", (dir / "a.csv").string());
  std::ifstream in(dir / "a.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "suite,name,module,statistic,lo,hi,sigma,passed,rerun,note");
  CHECK(row.rfind("identity,identity A at t=0.5,filter,1.0009999999999999", 0) == 0);
  std::getline(in, row);
  CHECK(row.find("\"R, with \"\"quotes\"\"\"") != std::string::npos);

  CHECK_THROWS_AS(emit(r, "xml", (dir / "a.xml").string()), std::invalid_argument);
  CHECK_THROWS(emit(r, "json", "/proc/azema/report.json"));
  emit_timing(r, (dir / "timing.csv").string());
  CHECK(slurp(dir / "timing.csv").find("99") != std::string::npos);
}

TEST_CASE("Convergence study") {
  auto c = load_config((kConfigs / "smoke.json").string());
  CHECK_THROWS_AS(convergence_study(c, StudyAxis::n_particles, {1000}), ConfigError);
  CHECK_THROWS_AS(convergence_study(c, StudyAxis::dt, {0.01, 0.005, -1.0}), ConfigError);
  CHECK_THROWS_AS(parse_axis("temperature"), ConfigError);
  CHECK(parse_axis("N_p") == StudyAxis::n_particles);
  // Particle variance of Z_T on a fixed observation path decays like 1 / N_p.
  const auto t = convergence_study(c, StudyAxis::n_particles, {200, 800, 3200}, 24);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows.front().level == 200);
  CHECK(t.monotone);
  CHECK(t.fitted_order == Catch::Approx(-1.0).margin(0.5));
  const auto j = to_json(t);
  CHECK(j["axis"] == "N_p");
  CHECK(j["rows"].size() == 3);
}

TEST_CASE("Smoke configuration passes every suite") {
  const auto c = load_config((kConfigs / "smoke.json").string());
  const auto r = run_suite(c);
  for (const auto& ch : r.checks) {
    INFO(ch.suite << ": " << ch.name << " = " << ch.statistic << " in [" << ch.lo << ", " << ch.hi << "]");
    CHECK(ch.passed);
  }
  for (const auto& s : all_suites()) CHECK_FALSE(r.suite(s).empty());
  CHECK_THROWS_AS(run_suite(c, {"nonsense"}), ConfigError);
}
