// Acceptance run: one PASS/FAIL line per criterion on the default scenario
// (a(x) = -x, b(x) = 0.5 x clipped at |x| = 4, X_0 = 1, T = 1, dt = 1e-3,
// N_p = 1e4, 400 observation paths). All sample sizes and bands are fixed here.

#include "azema/azema.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

using namespace azema;

ExperimentConfig acceptance_config() {
  ExperimentConfig c;
  c.scenario.T = 1.0;
  c.scenario.dt = 1e-3;
  c.scenario.n_paths = 400;
  c.scenario.seed = 20240601;
  c.scenario.drift = Drift::affine(0.0, -1.0);
  c.scenario.obs = Observation::clipped_linear(0.5, 4.0);
  c.scenario.init = InitialLaw::point(1.0);
  c.filter.n_particles = 10000;
  c.filter.resample_threshold = 0.5;
  c.filter.eps = 0.0;  // 10 dt
  c.filter.richardson = true;
  c.filter.seed = 7;
  c.report_times = {0.25, 0.5, 1.0};

  c.pricing.t = 0.5;
  c.pricing.bond.T = 1.0;
  c.pricing.bond.face = 1.0;
  c.pricing.n_inner = 1000;
  c.pricing.inner_particles = 1000;
  c.pricing.inner_dt = 2e-3;
  c.pricing.duffie_particles = 300;
  c.pricing.duffie_dt = 5e-3;
  c.pricing.n_inner_inner = 30;

  c.params.density_bridges = 10000;
  c.params.density_bridge_steps = 256;
  c.params.ks_paths = 1000;
  c.params.ks_particles = 2000;
  c.params.ks_dt = 2e-3;
  c.params.decomposition_paths = 40;
  c.params.degenerate_replicates = 20;
  c.params.rebate_paths = 100000;
  c.params.rebate_dt = 1e-3;

  c.tol.sigma = 3.0;
  c.tol.rerun_sigma = 4.0;
  c.tol.rerun = true;
  return c;
}

struct Criterion {
  int id;
  std::string title;
  std::function<bool(const Check&)> select;
};

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria on the default scenario"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "Directory for the full report")->capture_default_str();
  app.add_option("--criterion", only, "Run only these criteria (1-10)");
  CLI11_PARSE(app, argc, argv);

  const auto cfg = acceptance_config();
  const std::vector<Criterion> criteria{
      {1, "hitting density: closed form vs bridge MC, 5x5 grid, 3 drifts",
       [](const Check& c) { return c.suite == "density"; }},
      {2, "inverse-time bound, delta, sup t*l", [](const Check& c) { return c.suite == "bounds"; }},
      {3, "identity A: mean Z + C = 1, gap shrinks with dt",
       [](const Check& c) { return c.suite == "identity" && starts_with(c.name, "identity A"); }},
      {4, "identity B: mean D + Lambda = 1",
       [](const Check& c) { return c.suite == "identity" && starts_with(c.name, "identity B"); }},
      {5, "b = 0 reduction to the prior survival curve", [](const Check& c) { return c.suite == "degenerate"; }},
      {6, "multiplicative decomposition gap halves", [](const Check& c) { return c.suite == "decomposition"; }},
      {7, "KS residual mean at T for two bumps", [](const Check& c) { return c.suite == "ks_residual"; }},
      {8, "pricing cross-formula agreement and tower check",
       [](const Check& c) {
         return (c.suite == "pricing" && c.name.find("survival price vs") != std::string::npos) ||
                (c.suite == "identity" && starts_with(c.name, "tower"));
       }},
      {9, "rebate R(s) = s vs MC, R = 1 complementarity", [](const Check& c) { return c.suite == "rebate"; }},
      {10, "byte-identical reruns across worker counts", [](const Check& c) { return c.suite == "determinism"; }},
  };
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  std::vector<std::string> suites;
  auto need = [&](const std::string& s) {
    if (std::find(suites.begin(), suites.end(), s) == suites.end()) suites.push_back(s);
  };
  if (wanted(1)) need("density");
  if (wanted(2)) need("bounds");
  if (wanted(3) || wanted(4) || wanted(8)) need("identity");
  if (wanted(5)) need("degenerate");
  if (wanted(6)) need("decomposition");
  if (wanted(7)) need("ks_residual");
  if (wanted(8)) need("pricing");
  if (wanted(9)) need("rebate");
  if (wanted(10)) need("determinism");

  SuiteReport rep;
  try {
    rep = run_suite(cfg, suites);
  } catch (const std::exception& e) {
    std::cerr << "acceptance run aborted: " << e.what() << '\n';
    return 2;
  }
  std::filesystem::create_directories(out);
  emit(rep, "json", (std::filesystem::path(out) / "acceptance.json").string());
  emit_timing(rep, (std::filesystem::path(out) / "timing.csv").string());

  bool all = true;
  for (const auto& cr : criteria) {
    if (!wanted(cr.id)) continue;
    std::vector<const Check*> mine;
    for (const auto& c : rep.checks)
      if (cr.select(c)) mine.push_back(&c);
    const bool ok = !mine.empty() && std::all_of(mine.begin(), mine.end(), [](const Check* c) { return c->passed; });
    all = all && ok;
    std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << cr.id << ": " << cr.title << '\n';
    for (const auto* c : mine)
      std::cout << "        " << (c->passed ? "ok  " : "MISS") << ' ' << c->name << " = " << c->statistic << " in ["
                << c->lo << ", " << c->hi << "]" << (c->rerun ? " after rerun" : "")
                << (c->note.empty() ? "" : "  (" + c->note + ")") << '\n';
  }
  return all ? 0 : 1;
}
