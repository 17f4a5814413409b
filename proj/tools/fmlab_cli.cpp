#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fmlab/harness.hpp"
#include "fmlab/partition.hpp"
#include "fmlab/theory.hpp"

namespace {

int cmd_theory(const std::vector<std::string>& params) {
  std::map<std::string, double> kv{{"s", 1.0}, {"d", 2.0}, {"kappa", 0.5}, {"delta", 0.0}, {"n", 10000.0}};
  for (const auto& p : params) {
    const auto eq = p.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("theory: expected key=value, got " + p);
    const std::string key = p.substr(0, eq);
    if (!kv.count(key) && key != "kappatilde" && key != "r0" && key != "V")
      throw std::invalid_argument("theory: unknown key " + key);
    kv[key] = std::stod(p.substr(eq + 1));
  }
  const double s = kv["s"], kappa = kv["kappa"], delta = kv["delta"];
  const int d = static_cast<int>(kv["d"]);
  const auto n = static_cast<std::uint64_t>(kv["n"]);
  const double kt = kv.count("kappatilde") ? kv["kappatilde"] : kappa;

  nlohmann::ordered_json j;
  j["s"] = s;
  j["d"] = d;
  j["kappa"] = kappa;
  j["delta"] = delta;
  j["n"] = n;
  j["upper_rate_exponent"] = fmlab::upper_rate_exponent(s, d, kappa, delta);
  if (d >= 2)
    j["minimax_lower_exponent"] = fmlab::minimax_lower_exponent(s, d);
  else
    j["minimax_lower_exponent"] = nullptr;
  j["kde_exponent"] = fmlab::kde_exponent(d);
  j["N"] = fmlab::n_to_N(n, s, d);
  j["t_star"] = fmlab::t_star_balance(n, s, d, kappa, delta);
  j["r0_minimum"] = fmlab::r0_minimum(s, kappa, kt);
  fmlab::PartitionParams pp;
  pp.n = n;
  pp.s = s;
  pp.d = d;
  pp.kappa = kappa;
  pp.kappatilde = kt;
  pp.delta = delta;
  pp.r0 = kv.count("r0") ? kv["r0"] : fmlab::r0_minimum(s, kappa, kt);
  j["partition"] = nlohmann::ordered_json::parse(fmlab::partition_json(fmlab::build_partition(pp)));
  std::cout << j.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmlab: flow-matching rate laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir, report_dir;
  int parallel = 0;
  std::uint64_t seed_offset = 0;
  bool have_offset = false;
  std::vector<std::string> theory_params;

  auto* run = app.add_subcommand("run", "run an experiment grid");
  run->add_option("config", config_path, "config file")->required()->check(CLI::ExistingFile);
  auto* offset_opt = run->add_option("--seed-offset", seed_offset, "added to every seed");
  run->add_option("--parallel", parallel, "number of grid cells run concurrently")->check(CLI::PositiveNumber);
  run->add_option("--out", out_dir, "output directory (overrides [output] dir)");

  auto* report = app.add_subcommand("report", "regenerate report.json and plots from a result directory");
  report->add_option("dir", report_dir, "result directory")->required()->check(CLI::ExistingDirectory);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a config file");
  validate->add_option("config", validate_path, "config file")->required()->check(CLI::ExistingFile);

  auto* theory = app.add_subcommand("theory", "print theory calculators as JSON");
  theory->add_option("params", theory_params, "key=value pairs: s d kappa delta n [kappatilde r0]");

  CLI11_PARSE(app, argc, argv);
  have_offset = offset_opt->count() > 0;

  try {
    if (*run) {
      fmlab::ExperimentConfig cfg = fmlab::load_config(config_path);
      if (parallel > 0) cfg.parallel = parallel;
      if (have_offset) cfg.seed_offset = seed_offset;
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      const fmlab::RunSummary summary = fmlab::run_experiment(cfg, &std::cerr);
      const double rate = static_cast<double>(summary.failures) / static_cast<double>(summary.cells.size());
      std::cout << "cells: " << summary.cells.size() << ", failed: " << summary.failures << ", output: "
                << cfg.output_dir << '\n';
      return rate > 0.2 ? 2 : 0;
    }
    if (*report) {
      fmlab::write_report(report_dir);
      std::cout << "wrote " << report_dir << "/report.json\n";
      return 0;
    }
    if (*validate) {
      const fmlab::ExperimentConfig cfg = fmlab::load_config(validate_path);
      fmlab::validate_config(cfg);
      std::cout << "ok: " << cfg.schedules.size() << " schedules x " << cfg.n_grid.size() << " n x "
                << cfg.seeds.size() << " seeds\n";
      return 0;
    }
    if (*theory) return cmd_theory(theory_params);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
