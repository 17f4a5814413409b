#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fmlab/ode_flow.hpp"
#include "fmlab/partition.hpp"
#include "fmlab/schedules.hpp"
#include "fmlab/targets.hpp"

namespace fmlab {

enum class FieldMode { Trained, Oracle, Kde };
enum class PartitionMode { Single, Dyadic };
enum class T0Mode { Fixed, Theory };

struct TargetSpec {
  TargetKind kind = TargetKind::SplineMixture;
  int dim = 1;
  double smoothness = 2.0;
  std::vector<double> coefficients;  // explicit coefficients win over the generator
  int bases = 6;                     // spline mixture: bases per axis
  int bumps = 3;                     // perturbed uniform: bump count
  double amplitude = 1.0;
  std::uint64_t generator_seed = 7;
};

struct ScheduleSpec {
  std::string name;
  Schedule schedule;
};

struct EvalSpec {
  std::vector<double> p{1.0};
  std::string estimator = "auto";  // auto | exact | sinkhorn
  Eigen::Index n_gen = 8192;
  Eigen::Index reference_size = 8192;
  Eigen::Index n_eval = 2048;      // d >= 2: both samples are resampled to this size
  double sinkhorn_eps = 0.01;      // relative to the median cost
  int sinkhorn_iter = 2000;
};

struct ExperimentConfig {
  std::string name = "experiment";
  TargetSpec target;
  std::vector<ScheduleSpec> schedules;
  std::vector<std::uint64_t> n_grid;
  std::vector<std::uint64_t> seeds;
  FieldMode mode = FieldMode::Trained;
  PartitionMode partition = PartitionMode::Dyadic;
  T0Mode t0_mode = T0Mode::Fixed;
  double t0 = 1e-3;
  double r0 = 0.0;  // 0: smallest admissible value for each schedule
  double delta = 0.0;
  PartitionCaps caps;
  PartitionModelConfig model;
  FlowConfig flow;
  EvalSpec eval;
  std::string output_dir = "out";
  int parallel = 1;
  std::uint64_t seed_offset = 0;
};

ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);
// Writes the effective configuration in the same grammar.
void write_config(const ExperimentConfig& cfg, std::ostream& out);
// Throws ParameterError describing the first violated invariant.
void validate_config(const ExperimentConfig& cfg);

TargetDensity make_target(const TargetSpec& spec);

struct SlopeFit {
  double slope = 0.0;
  double std_error = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
};
// Ordinary least squares of log(value) on log(n). Needs >= 3 points with
// positive values; throws ParameterError when every n is equal.
SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points);

struct CellResult {
  std::string schedule;
  double kappa = 0.0;
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
  double t0 = 0.0;
  bool ok = false;
  std::string reason;
  std::vector<std::pair<double, double>> w;  // (p, W_p)
  NetStats stats;                            // trained mode: largest interval net
};

struct RunSummary {
  std::vector<CellResult> cells;  // sorted by schedule order, n, seed
  std::size_t failures = 0;
  std::vector<std::pair<std::string, std::string>> partitions;  // (key, json)
};

// Runs every grid cell and writes results.csv, failures.csv, cell_stats.csv,
// partitions.json and config.ini into cfg.output_dir, then the report.
RunSummary run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// One grid cell; deterministic in (cfg, schedule index, n, seed).
CellResult run_cell(const ExperimentConfig& cfg, const TargetDensity& target, std::size_t schedule_index,
                    std::uint64_t n, std::uint64_t seed, std::string* partition_json_out = nullptr);

// Reads the files written by run_experiment in `dir` and writes report.json
// and plots/*.dat. Returns the JSON text.
std::string write_report(const std::string& dir);

// Flag for an empirical slope against a theory exponent (rate n^{-exponent}).
std::string slope_flag(double slope, double exponent, double tolerance = 0.15);

// Fixed-precision rendering used in every output file.
std::string format_double(double v);

}  // namespace fmlab
