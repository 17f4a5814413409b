#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace fmlab {

// Discrete measure sum_i w_i delta_{x_i}; points are stored one per column.
// An empty weight vector means uniform weights.
struct EmpiricalMeasure {
  Eigen::MatrixXd points;
  Eigen::VectorXd weights;

  Eigen::Index size() const { return points.cols(); }
  Eigen::Index dim() const { return points.rows(); }
  bool uniform() const { return weights.size() == 0; }
};

// Validates n >= 1 and weights (nonnegative, summing to 1 within 1e-12).
EmpiricalMeasure make_measure(Eigen::MatrixXd points, Eigen::VectorXd weights = {});
EmpiricalMeasure make_measure_1d(const std::vector<double>& values);

// Exact 1D value via the quantile coupling. Throws DomainError for d != 1.
double w_p_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p);

// Minimum-cost perfect matching (shortest augmenting path with potentials).
struct Assignment {
  std::vector<int> row_to_col;
  double total_cost = 0.0;
};
Assignment solve_assignment(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cost);

inline constexpr Eigen::Index kExactSolverCap = 4096;

struct ExactTransport {
  double value = 0.0;
  std::vector<int> matching;    // a-index -> b-index
  Eigen::VectorXd pair_costs;   // ||a_i - b_match(i)||^p
};

// Uniform weights, equal sizes n <= 4096. Throws ParameterError otherwise.
ExactTransport w_p_exact_transport(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p);
double w_p_exact(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p);

// Standard error of (mean pair cost)^{1/p} from resampling matched pairs.
double matched_pair_bootstrap_se(const Eigen::VectorXd& pair_costs, double p, int resamples,
                                 std::uint64_t seed);

struct SinkhornResult {
  double value = 0.0;  // debiased divergence raised to 1/p
  bool converged = false;
  int iterations = 0;  // sweeps at the target eps, cross problem
  double marginal_error = 0.0;  // L1 marginal violation of the cross problem
};

// Log-domain Sinkhorn with epsilon scaling, debiased by the two self terms.
SinkhornResult sinkhorn_w_p(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p,
                            double eps, int max_iter, double tol = 1e-6);

// Uniform subsample of k columns without replacement (fixed seed).
Eigen::MatrixXd resample_columns(const Eigen::MatrixXd& points, Eigen::Index k, std::uint64_t seed);

// sqrt((1 - m)^2 V + d sigma^2).
double conv_gap_bound(double m, double sigma, double V, int d);

}  // namespace fmlab
