// Command-line front end: simulate, filter, price, verify, study.

#include "azema/azema.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace {

using namespace azema;

struct Common {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
};

ExperimentConfig load(const Common& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.scenario.seed = *o.seed;
  c.out_dir = o.out;
  c.validate();
  std::filesystem::create_directories(c.out_dir);
  return c;
}

std::string in_dir(const ExperimentConfig& c, const std::string& name) {
  return (std::filesystem::path(c.out_dir) / name).string();
}

void add_common(CLI::App* app, Common& o) {
  app->add_option("--config", o.config, "JSON experiment config (defaults when omitted)");
  app->add_option("--out", o.out, "Output directory")->capture_default_str();
  app->add_option("--seed", o.seed, "Override scenario.seed");
}

int cmd_simulate(const Common& o, std::size_t dump) {
  const auto c = load(o);
  const auto set = simulate_batch(c.scenario);
  write_json(to_json(set.stats), in_dir(c, "batch.json"));
  for (std::size_t i = 0; i < std::min(dump, c.scenario.n_paths); ++i)
    write_scenario_csv(simulate_scenario(c.scenario, i), in_dir(c, concat("scenario_", i, ".csv")));
  std::cout << "default frequency " << set.stats.default_freq << " +- " << set.stats.default_freq_se << " over "
            << set.stats.n_paths << " paths\n";
  return 0;
}

int cmd_filter(const Common& o, std::size_t path) {
  const auto c = load(o);
  const auto h = hitting_model_for(c);
  const FilterModel m(c.scenario.drift, c.scenario.obs, h, c.scenario.step(), c.filter);
  const auto sc = simulate_scenario(c.scenario, path);
  const auto tr = run_filter(sc, c.scenario.init, m);
  write_scenario_csv(sc, in_dir(c, concat("scenario_", path, ".csv")));
  write_trajectory_csv(tr, in_dir(c, concat("trajectory_", path, ".csv")));
  std::cout << "path " << path << ": Z_T = " << tr.states.back().Z << ", resamples " << tr.resamples
            << (sc.defaulted ? concat(", default at ", sc.tau) : std::string(", no default")) << '\n';
  return 0;
}

int cmd_price(const Common& o, std::size_t path, bool nested) {
  const auto c = load(o);
  const auto h = hitting_model_for(c);
  const auto& pc = c.pricing;
  const FilterModel m(c.scenario.drift, c.scenario.obs, h, c.scenario.step(), c.filter);
  const auto sc = simulate_scenario(c.scenario, path);
  const std::size_t k = static_cast<std::size_t>(std::llround(pc.t / c.scenario.step()));
  std::optional<ParticleCloud> snap;
  run_filter(sc, c.scenario.init, m, [&](std::size_t kk, const ParticleCloud& cl) {
    if (kk == k) snap = cl;
  });
  const bool defaulted = !sc.D(k);
  json reports = json::array();
  auto rep = bond_price(*snap, h, pc.t, pc.bond, sc.Y[k], defaulted);
  rep.std_error = defaulted ? 0.0 : projection_se(*snap, [&](double x) { return h.survival(pc.bond.T - pc.t, x); });
  reports.push_back(to_json(rep));
  if (nested && !defaulted) {
    auto opts = c.filter;
    opts.n_particles = pc.inner_particles;
    opts.eps = 0.0;
    const FilterModel inner(c.scenario.drift, c.scenario.obs, h, pc.inner_dt, opts);
    NestedOptions no;
    no.n_inner = pc.n_inner;
    no.n_particles = pc.inner_particles;
    no.seed = pc.seed;
    const auto est = price_via_intensity_discount(*snap, inner, pc.t, pc.bond.T, no);
    PricingReport r;
    r.t = pc.t;
    r.method = "intensity_discount";
    r.survival_price = est.estimate;
    r.total = pc.bond.face * est.estimate;
    r.std_error = est.std_error;
    auto j = to_json(r);
    j["kappa_mean"] = est.kappa_mean;
    j["kappa_flagged"] = est.flagged;
    reports.push_back(j);
  }
  write_json(reports, in_dir(c, concat("price_", path, ".json")));
  std::cout << reports.dump(2) << '\n';
  return 0;
}

int cmd_verify(const Common& o, const std::vector<std::string>& suites) {
  const auto c = load(o);
  const auto rep = run_suite(c, suites);
  emit(rep, "json", in_dir(c, "report.json"));
  emit(rep, "csv", in_dir(c, "report.csv"));
  emit_timing(rep, in_dir(c, "timing.csv"));
  for (const auto& ck : rep.checks)
    std::cout << (ck.passed ? "PASS " : "FAIL ") << ck.suite << ": " << ck.name << " = " << ck.statistic << " in ["
              << ck.lo << ", " << ck.hi << "]" << (ck.rerun ? " (rerun)" : "") << '\n';
  std::cout << (rep.passed() ? "all checks passed" : "some checks failed") << '\n';
  return rep.passed() ? 0 : 1;
}

int cmd_study(const Common& o, const std::string& axis, const std::vector<double>& levels) {
  const auto c = load(o);
  const auto tab = convergence_study(c, parse_axis(axis), levels);
  emit(tab, "json", in_dir(c, concat("study_", tab.axis, ".json")));
  emit(tab, "csv", in_dir(c, concat("study_", tab.axis, ".csv")));
  for (const auto& r : tab.rows) std::cout << tab.axis << ' ' << r.level << ": " << r.statistic << " +- " << r.std_error << '\n';
  std::cout << "fitted order " << tab.fitted_order << (tab.monotone ? ", monotone" : ", not monotone") << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Azema supermartingale filtering and defaultable bond pricing"};
  app.require_subcommand(1);
  Common common;

  std::size_t dump = 1;
  auto* sim = app.add_subcommand("simulate", "Simulate a scenario batch");
  add_common(sim, common);
  sim->add_option("--dump", dump, "Number of paths written as CSV")->capture_default_str();

  std::size_t path = 0;
  auto* fil = app.add_subcommand("filter", "Filter one scenario path");
  add_common(fil, common);
  fil->add_option("--path", path, "Scenario path id")->capture_default_str();

  bool nested = false;
  auto* pri = app.add_subcommand("price", "Price the bond at pricing.t along one path");
  add_common(pri, common);
  pri->add_option("--path", path, "Scenario path id")->capture_default_str();
  pri->add_flag("--nested", nested, "Also run the intensity-discount nested Monte Carlo");

  std::vector<std::string> suites;
  auto* ver = app.add_subcommand("verify", "Run verification suites");
  add_common(ver, common);
  ver->add_option("--suite", suites, "Suite to run (repeatable); default: the config's list")
      ->check(CLI::IsMember(all_suites()));

  std::string axis = "dt";
  std::vector<double> levels;
  auto* stu = app.add_subcommand("study", "Convergence study along one axis");
  add_common(stu, common);
  stu->add_option("--axis", axis, "dt, N_p, n_paths or eps")->capture_default_str();
  stu->add_option("--levels", levels, "At least three levels")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) return cmd_simulate(common, dump);
    if (*fil) return cmd_filter(common, path);
    if (*pri) return cmd_price(common, path, nested);
    if (*ver) return cmd_verify(common, suites);
    if (*stu) return cmd_study(common, axis, levels);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
