#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fmlab/cfm.hpp"
#include "fmlab/error.hpp"
#include "fmlab/harness.hpp"
#include "fmlab/rng.hpp"
#include "fmlab/theory.hpp"
#include "fmlab/wasserstein.hpp"

namespace fmlab {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw ParameterError("fit_slope: need at least 3 points");
  const double k = static_cast<double>(points.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [n, v] : points) {
    if (!(n > 0.0) || !(v > 0.0)) throw ParameterError("fit_slope: n and values must be positive");
    mx += std::log(n);
    my += std::log(v);
  }
  mx /= k;
  my /= k;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& [n, v] : points) {
    sxx += (std::log(n) - mx) * (std::log(n) - mx);
    sxy += (std::log(n) - mx) * (std::log(v) - my);
  }
  if (sxx == 0.0) throw ParameterError("fit_slope: all n are equal");
  SlopeFit fit;
  fit.points = points.size();
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (const auto& [n, v] : points) {
    const double r = std::log(v) - fit.intercept - fit.slope * std::log(n);
    rss += r * r;
  }
  fit.std_error = std::sqrt(rss / (k - 2.0) / sxx);
  return fit;
}

std::string slope_flag(double slope, double exponent, double tolerance) {
  const double diff = slope + exponent;
  if (std::abs(diff) <= tolerance) return "consistent";
  return diff > 0.0 ? "shallower" : "steeper";
}

namespace {

// FNV-1a; keeps per-schedule seeds independent of the section order.
std::uint64_t stable_hash(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

TimePartition make_partition(const ExperimentConfig& cfg, const Schedule& schedule, std::uint64_t n) {
  PartitionParams p;
  p.n = n;
  p.s = cfg.target.smoothness;
  p.d = cfg.target.dim;
  p.kappa = kappa_of(schedule);
  p.kappatilde = schedule.kappatilde;
  p.delta = cfg.delta;
  p.caps = cfg.caps;
  if (cfg.t0_mode == T0Mode::Theory) {
    p.theory_faithful = true;
    p.r0 = cfg.r0 > 0.0 ? cfg.r0 : r0_minimum(p.s, p.kappa, p.kappatilde);
  } else {
    p.T0_fixed = cfg.t0;
  }
  TimePartition part = build_partition(p);
  if (cfg.partition == PartitionMode::Single) {
    TimePartition single = single_interval(part.T0, part.N);
    single.R0 = part.R0;
    single.kappa = part.kappa;
    single.delta = part.delta;
    single.d = part.d;
    single.T_star = part.T_star;
    single.clipped = part.clipped;
    single.k_capped = part.k_capped;
    return single;
  }
  return part;
}

std::vector<double> measure(const ExperimentConfig& cfg, const Eigen::MatrixXd& gen, const Eigen::MatrixXd& ref,
                            std::uint64_t seed) {
  std::vector<double> out;
  if (gen.rows() == 1) {
    const EmpiricalMeasure a = make_measure(gen), b = make_measure(ref);
    for (double p : cfg.eval.p) out.push_back(w_p_1d(a, b, p));
    return out;
  }
  const Eigen::Index k = std::min({cfg.eval.n_eval, gen.cols(), ref.cols()});
  const EmpiricalMeasure a = make_measure(gen.cols() == k ? gen : resample_columns(gen, k, substream_seed(seed, 1)));
  const EmpiricalMeasure b = make_measure(ref.cols() == k ? ref : resample_columns(ref, k, substream_seed(seed, 2)));
  for (double p : cfg.eval.p) {
    if (cfg.eval.estimator == "sinkhorn") {
      std::vector<double> costs;
      for (Eigen::Index i = 0; i < a.size(); ++i)
        for (Eigen::Index j = 0; j < b.size(); j += 7) costs.push_back(std::pow((a.points.col(i) - b.points.col(j)).norm(), p));
      std::nth_element(costs.begin(), costs.begin() + costs.size() / 2, costs.end());
      const double eps = cfg.eval.sinkhorn_eps * std::max(costs[costs.size() / 2], 1e-12);
      const SinkhornResult r = sinkhorn_w_p(a, b, p, eps, cfg.eval.sinkhorn_iter);
      if (!r.converged) throw NumericalError("sinkhorn did not converge");
      out.push_back(r.value);
    } else {
      out.push_back(w_p_exact(a, b, p));
    }
  }
  return out;
}

}  // namespace

CellResult run_cell(const ExperimentConfig& cfg, const TargetDensity& target, std::size_t schedule_index,
                    std::uint64_t n, std::uint64_t seed, std::string* partition_json_out) {
  const ScheduleSpec& spec = cfg.schedules.at(schedule_index);
  CellResult cell;
  cell.schedule = spec.name;
  cell.kappa = kappa_of(spec.schedule);
  cell.n = n;
  cell.seed = seed;
  try {
    const std::uint64_t base = seed + cfg.seed_offset;
    const std::uint64_t data_seed = substream_seed(base, n);
    const Eigen::MatrixXd data = sample(target, data_seed, static_cast<Eigen::Index>(n));
    const Eigen::MatrixXd ref = sample(target, substream_seed(data_seed, 0x7ef), cfg.eval.reference_size);
    const std::uint64_t run_seed = substream_seed(data_seed, stable_hash(spec.name));

    const TimePartition part = make_partition(cfg, spec.schedule, n);
    cell.t0 = part.T0;
    if (partition_json_out) *partition_json_out = partition_json(part);

    FlowConfig flow = cfg.flow;
    flow.t_start = 1.0;
    flow.t_end = part.T0;
    flow.breakpoints = part.knots;

    Eigen::MatrixXd gen;
    switch (cfg.mode) {
      case FieldMode::Trained: {
        const PartitionedTraining trained =
            train_partitioned(data, spec.schedule, part, cfg.model, substream_seed(run_seed, 1), 1);
        for (const auto& net : trained.field->nets()) {
          const NetStats s = net_stats(*net);
          if (s.parameters > cell.stats.parameters) cell.stats = s;
        }
        gen = push_samples(trained.field->field(), target.dim, substream_seed(run_seed, 2), cfg.eval.n_gen, flow, 1);
        break;
      }
      case FieldMode::Oracle: {
        auto oracle = std::make_shared<const EmpiricalOracle>(data, spec.schedule);
        gen = push_samples(as_field(oracle), target.dim, substream_seed(run_seed, 2), cfg.eval.n_gen, flow, 1);
        break;
      }
      case FieldMode::Kde: {
        Engine rng = make_engine(run_seed, 3);
        const double sigma = eval(spec.schedule, part.T0).sigma;
        gen.resize(target.dim, cfg.eval.n_gen);
        for (Eigen::Index c = 0; c < gen.cols(); ++c) {
          const auto j = static_cast<Eigen::Index>(rng() % n);
          gen.col(c) = data.col(j) + sigma * standard_normal(rng, target.dim, 1);
        }
        break;
      }
    }
    const std::vector<double> w = measure(cfg, gen, ref, substream_seed(run_seed, 4));
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(w[i])) throw NumericalError("non-finite Wasserstein value");
      cell.w.emplace_back(cfg.eval.p[i], w[i]);
    }
    cell.ok = true;
  } catch (const std::exception& e) {
    cell.ok = false;
    cell.reason = e.what();
    cell.w.clear();
  }
  return cell;
}

namespace {

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  validate_config(cfg);
  const TargetDensity target = make_target(cfg.target);
  struct Job {
    std::size_t schedule;
    std::uint64_t n;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < cfg.schedules.size(); ++s)
    for (std::uint64_t n : cfg.n_grid)
      for (std::uint64_t seed : cfg.seeds) jobs.push_back({s, n, seed});

  RunSummary summary;
  summary.cells.resize(jobs.size());
  std::vector<std::string> part_json(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      summary.cells[i] = run_cell(cfg, target, job.schedule, job.n, job.seed, &part_json[i]);
      if (log) {
        std::lock_guard lock(log_mutex);
        const CellResult& c = summary.cells[i];
        *log << "cell " << c.schedule << " n=" << c.n << " seed=" << c.seed << ": ";
        if (c.ok)
          for (const auto& [p, w] : c.w) *log << "W" << p << "=" << w << ' ';
        else
          *log << "FAILED " << c.reason;
        *log << std::endl;
      }
    }
  };
  const int threads = std::clamp<int>(cfg.parallel, 1, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  std::ostringstream results, failures, stats, config;
  results << "target,schedule,kappa,n,seed,p,w_value,t0,mode\n";
  failures << "schedule,n,seed,reason\n";
  stats << "schedule,n,seed,depth,max_width,parameters,nonzero,max_magnitude\n";
  const std::string mode = cfg.mode == FieldMode::Trained ? "trained" : cfg.mode == FieldMode::Oracle ? "oracle" : "kde";
  std::map<std::string, std::string> partitions;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const CellResult& c = summary.cells[i];
    if (!part_json[i].empty()) partitions.emplace(c.schedule + "/n=" + std::to_string(c.n), part_json[i]);
    if (!c.ok) {
      ++summary.failures;
      failures << c.schedule << ',' << c.n << ',' << c.seed << ',' << csv_safe(c.reason) << '\n';
      continue;
    }
    for (const auto& [p, w] : c.w)
      results << target_id(target) << ',' << c.schedule << ',' << format_double(c.kappa) << ',' << c.n << ','
              << c.seed << ',' << format_double(p) << ',' << format_double(w) << ',' << format_double(c.t0) << ','
              << mode << '\n';
    if (cfg.mode == FieldMode::Trained)
      stats << c.schedule << ',' << c.n << ',' << c.seed << ',' << c.stats.depth << ',' << c.stats.max_width << ','
            << c.stats.parameters << ',' << c.stats.nonzero << ',' << format_double(c.stats.max_magnitude) << '\n';
  }
  nlohmann::ordered_json pj = nlohmann::ordered_json::object();
  for (const auto& [key, json] : partitions) pj[key] = nlohmann::ordered_json::parse(json);
  summary.partitions.assign(partitions.begin(), partitions.end());
  write_config(cfg, config);

  write_file(dir / "results.csv", results.str());
  write_file(dir / "failures.csv", failures.str());
  write_file(dir / "cell_stats.csv", stats.str());
  write_file(dir / "partitions.json", pj.dump(2) + "\n");
  write_file(dir / "config.ini", config.str());
  write_report(dir.string());
  return summary;
}

}  // namespace fmlab
