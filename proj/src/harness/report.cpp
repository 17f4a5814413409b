#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "fmlab/error.hpp"
#include "fmlab/harness.hpp"
#include "fmlab/theory.hpp"

namespace fmlab {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

struct Key {
  std::string schedule;
  std::uint64_t n;
  std::uint64_t seed;
  bool operator<(const Key& o) const {
    return std::tie(schedule, n, seed) < std::tie(o.schedule, o.n, o.seed);
  }
};

int inversions(const std::vector<double>& v) {
  int count = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1]) ++count;
  return count;
}

}  // namespace

std::string write_report(const std::string& dir_name) {
  const fs::path dir(dir_name);
  const ExperimentConfig cfg = load_config((dir / "config.ini").string());
  const TargetDensity target = make_target(cfg.target);

  // (schedule, n, seed) -> p -> value
  std::map<Key, std::map<double, double>> values;
  for (const auto& row : read_csv(dir / "results.csv")) {
    if (row.size() != 9) throw std::runtime_error("malformed row in results.csv");
    values[{row[1], std::stoull(row[3]), std::stoull(row[4])}][std::stod(row[5])] = std::stod(row[6]);
  }
  std::map<Key, std::string> failed;
  for (const auto& row : read_csv(dir / "failures.csv"))
    if (row.size() >= 4) failed[{row[0], std::stoull(row[1]), std::stoull(row[2])}] = row[3];
  std::map<Key, std::vector<std::string>> stats;
  if (fs::exists(dir / "cell_stats.csv"))
    for (const auto& row : read_csv(dir / "cell_stats.csv"))
      if (row.size() == 8) stats[{row[0], std::stoull(row[1]), std::stoull(row[2])}] = row;

  const double s = cfg.target.smoothness;
  const int d = cfg.target.dim;
  const double V = second_moment(target);

  ojson report;
  report["experiment"] = cfg.name;
  report["target"] = target_id(target);
  report["mode"] = cfg.mode == FieldMode::Trained ? "trained" : cfg.mode == FieldMode::Oracle ? "oracle" : "kde";

  ojson theory;
  theory["note"] = "exponents exclude poly(log n) factors; slope comparisons hold up to poly(log n)";
  theory["s"] = s;
  theory["d"] = d;
  theory["delta"] = cfg.delta;
  theory["kde_exponent"] = kde_exponent(d);
  if (d >= 2) {
    theory["minimax_lower_exponent"] = minimax_lower_exponent(s, d);
  } else {
    theory["minimax_lower_exponent"] = nullptr;
    theory["minimax_lower_note"] = "lower bound stated for d >= 2 only";
  }
  ojson sched_theory = ojson::array();
  for (const auto& spec : cfg.schedules) {
    const double kappa = kappa_of(spec.schedule);
    ojson t;
    t["schedule"] = spec.name;
    t["kappa"] = kappa;
    t["upper_rate_exponent"] = upper_rate_exponent(s, d, kappa, cfg.delta);
    t["r0_minimum"] = r0_minimum(s, kappa, spec.schedule.kappatilde);
    ojson per_n = ojson::array();
    for (std::uint64_t n : cfg.n_grid) {
      ojson row;
      row["n"] = n;
      row["N"] = n_to_N(n, s, d);
      row["t_star"] = t_star_balance(n, s, d, kappa, cfg.delta);
      // T0 actually used, from any successful cell of this (schedule, n).
      std::optional<double> t0;
      for (const auto& row_csv : read_csv(dir / "results.csv"))
        if (row_csv[1] == spec.name && std::stoull(row_csv[3]) == n) {
          t0 = std::stod(row_csv[7]);
          break;
        }
      if (t0 && *t0 < 1.0) {
        row["T0"] = *t0;
        row["theta_n"] = theta_n(spec.schedule, *t0, V, d);
      } else {
        row["T0"] = nullptr;
        row["theta_n"] = nullptr;
      }
      per_n.push_back(row);
    }
    t["grid"] = per_n;
    sched_theory.push_back(t);
  }
  theory["schedules"] = sched_theory;
  report["theory"] = theory;

  ojson cells = ojson::array();
  for (const auto& spec : cfg.schedules)
    for (std::uint64_t n : cfg.n_grid)
      for (std::uint64_t seed : cfg.seeds) {
        const Key key{spec.name, n, seed};
        const auto it = values.find(key);
        for (double p : cfg.eval.p) {
          ojson c;
          c["schedule"] = spec.name;
          c["n"] = n;
          c["seed"] = seed;
          c["p"] = p;
          if (it != values.end() && it->second.count(p)) {
            c["w_value"] = it->second.at(p);
          } else {
            c["w_value"] = nullptr;
            const auto f = failed.find(key);
            c["reason"] = f != failed.end() ? f->second : "missing from results.csv";
          }
          const auto st = stats.find(key);
          if (st != stats.end()) {
            const auto& r = st->second;
            const double L = std::stod(r[3]), W = std::stod(r[4]), S = std::stod(r[6]);
            const double B = std::max(1.0, std::stod(r[7]));
            c["net"] = {{"depth", L}, {"max_width", W}, {"nonzero", S}, {"max_magnitude", std::stod(r[7])}};
            c["covering_log_bound"] = covering_log_bound(S, L, W, B, 1.0 / static_cast<double>(n), static_cast<double>(n));
          }
          cells.push_back(c);
        }
      }
  report["cells"] = cells;

  fs::create_directories(dir / "plots");
  ojson slopes = ojson::array();
  std::map<double, std::map<std::string, double>> slope_by_p;
  for (const auto& spec : cfg.schedules) {
    const double kappa = kappa_of(spec.schedule);
    const double exponent = upper_rate_exponent(s, d, kappa, cfg.delta);
    for (double p : cfg.eval.p) {
      std::vector<std::pair<double, double>> points;
      std::vector<double> means;
      for (std::uint64_t n : cfg.n_grid) {
        double acc = 0.0;
        int count = 0;
        for (std::uint64_t seed : cfg.seeds) {
          const auto it = values.find({spec.name, n, seed});
          if (it != values.end() && it->second.count(p)) {
            acc += it->second.at(p);
            ++count;
          }
        }
        if (count > 0) {
          points.emplace_back(static_cast<double>(n), acc / count);
          means.push_back(acc / count);
        }
      }
      ojson row;
      row["target"] = target_id(target);
      row["schedule"] = spec.name;
      row["kappa"] = kappa;
      row["p"] = p;
      row["theory_exponent"] = exponent;
      row["kde_exponent"] = kde_exponent(d);
      ojson pts = ojson::array();
      for (const auto& [n, v] : points) pts.push_back({n, v});
      row["seed_averaged"] = pts;
      row["inversions"] = inversions(means);
      try {
        const SlopeFit fit = fit_slope(points);
        row["slope"] = fit.slope;
        row["slope_std_error"] = fit.std_error;
        row["flag"] = slope_flag(fit.slope, exponent);
        slope_by_p[p][spec.name] = fit.slope;
      } catch (const std::exception& e) {
        row["slope"] = nullptr;
        row["slope_std_error"] = nullptr;
        row["flag"] = nullptr;
        row["reason"] = e.what();
      }
      slopes.push_back(row);

      std::ostringstream dat;
      dat << "# n mean_w" << format_double(p) << " (" << spec.name << ")\n";
      for (const auto& [n, v] : points) dat << format_double(n) << ' ' << format_double(v) << '\n';
      std::ofstream out(dir / "plots" / (spec.name + "_p" + format_double(p) + ".dat"), std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + (dir / "plots").string());
      out << dat.str();
    }
  }
  report["slopes"] = slopes;
  ojson comparisons = ojson::array();
  for (const auto& [p, by_schedule] : slope_by_p)
    for (auto a = by_schedule.begin(); a != by_schedule.end(); ++a)
      for (auto b = std::next(a); b != by_schedule.end(); ++b)
        comparisons.push_back({{"p", p}, {"a", a->first}, {"b", b->first}, {"slope_a_minus_b", a->second - b->second}});
  report["slope_comparisons"] = comparisons;

  const std::string text = report.dump(2) + "\n";
  std::ofstream out(dir / "report.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "report.json").string());
  out << text;
  return text;
}

}  // namespace fmlab
