#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmlab/cfm.hpp"
#include "fmlab/schedules.hpp"
#include "fmlab/velocity_net.hpp"

namespace fmlab {

struct PartitionCaps {
  double T0_min = 1e-4;
  int K_max = 40;
};

// Dyadic grid T0 = t_0 < t_1 < ... < t_K = 1 with t_j = 2 t_{j-1}; interval j
// (1-based) is [t_{j-1}, t_j] with basis budget basis_counts[j - 1].
struct TimePartition {
  double T0 = 0.0;
  std::vector<double> knots;
  int j_star = 0;
  std::vector<std::uint64_t> basis_counts;
  std::uint64_t N = 1;
  double R0 = 0.0;
  double kappa = 1.0;
  double delta = 0.0;
  int d = 1;
  double T_star = 0.0;
  bool clipped = false;         // T0 raised to T0_min
  bool k_capped = false;        // T0 raised so that K <= K_max
  bool j_star_off_grid = false; // t_{j*} outside [T*, 3 T*]

  int K() const { return static_cast<int>(knots.size()) - 1; }
};

struct PartitionParams {
  std::uint64_t n = 2;
  double s = 1.0;
  int d = 1;
  double kappa = 1.0;
  double delta = 0.0;
  double r0 = 0.0;
  double kappatilde = 0.0;  // 0 means "same as kappa"
  bool theory_faithful = false;
  std::optional<double> T0_fixed;  // bypasses the N^{-R0} rule
  PartitionCaps caps;
};

TimePartition build_partition(const PartitionParams& params);
TimePartition build_partition(std::uint64_t n, double s, int d, double kappa, double delta, double r0,
                              const PartitionCaps& caps = {});

// Single interval [T0, 1] with budget N; used for the non-partitioned mode.
TimePartition single_interval(double T0, std::uint64_t N);

// t* = n^{-(1/kappa - delta)/(2s + d)}.
double t_star_balance(std::uint64_t n, double s, int d, double kappa, double delta);

// exp(int_{t_{j-1}}^{t_j} C/u du) = (t_j / t_{j-1})^C for every interval.
std::vector<double> gronwall_factors(const TimePartition& partition, double c_tilde);

std::string partition_json(const TimePartition& partition);

// Stitched field; dispatches on t with half-open intervals [t_{j-1}, t_j), the
// last interval closed. Immutable after construction.
class PiecewiseVelocityField {
 public:
  PiecewiseVelocityField(std::vector<double> knots, std::vector<std::shared_ptr<const VelocityNet>> nets);

  // 1-based interval index; DomainError outside [t_0, t_K].
  int interval_of(double t) const;
  Eigen::MatrixXd operator()(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const;
  VelocityField field() const;

  const std::vector<double>& knots() const { return knots_; }
  const std::vector<std::shared_ptr<const VelocityNet>>& nets() const { return nets_; }

 private:
  std::vector<double> knots_;
  std::vector<std::shared_ptr<const VelocityNet>> nets_;
};

struct PartitionModelConfig {
  int hidden_layers = 3;
  double width_c = 8.0;
  double clamp_d = 5.0;
  TrainConfig train;  // train.seed is ignored, see train_partitioned
};

struct PartitionedTraining {
  std::shared_ptr<const PiecewiseVelocityField> field;
  std::vector<TrainResult> results;  // one per interval
};

// Interval j uses substream_seed(seed, j) both for initialization and for
// training, so a one-interval partition reproduces a single-network run with
// that seed. Intervals train in parallel up to `parallel` threads.
PartitionedTraining train_partitioned(const Eigen::MatrixXd& data, const Schedule& schedule,
                                      const TimePartition& partition, const PartitionModelConfig& cfg,
                                      std::uint64_t seed, int parallel = 1);

}  // namespace fmlab
