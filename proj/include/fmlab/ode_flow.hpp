#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fmlab/cfm.hpp"
#include "fmlab/rng.hpp"

namespace fmlab {

enum class StepMethod { Euler, RK4, AdaptiveRK45 };
enum class StepSpacing { Uniform, Logarithmic };

// Integrates dx/dt = v(x, t) from t_start to t_end. The default direction is
// reverse time, 1 -> T0. Fixed-step grids include every breakpoint strictly
// between the endpoints so no step straddles a partition knot.
struct FlowConfig {
  StepMethod method = StepMethod::RK4;
  int steps = 200;
  double tol = 1e-6;  // AdaptiveRK45 only, in (0, 1e-2]
  StepSpacing spacing = StepSpacing::Logarithmic;
  double t_start = 1.0;
  double t_end = 1e-3;
  std::vector<double> breakpoints;
  // Extra grid points at t_start + (t_1 - t_start) 2^{-k}, k = 1..start_refinement.
  // Needed when the field is singular at t_start (VP: m' ~ (1 - t)^{-1/2}),
  // so the evaluation at t_start only ever multiplies a tiny step.
  int start_refinement = 0;
};

// Throws ParameterError when the config violates its invariants.
void check_config(const FlowConfig& cfg);

// Fixed-step time grid from t_start to t_end (inclusive), with breakpoints merged.
std::vector<double> time_grid(const FlowConfig& cfg);

// Every column of x is an initial state. Throws NumericalError with the
// column, time and state when a trajectory stops being finite.
Eigen::MatrixXd integrate(const VelocityField& field, const Eigen::MatrixXd& x, const FlowConfig& cfg);
Eigen::VectorXd integrate(const VelocityField& field, const Eigen::VectorXd& x1, const FlowConfig& cfg);

struct Trajectory {
  std::vector<double> t;
  std::vector<Eigen::VectorXd> x;
};
// Fixed-step methods only; records the state at every grid time.
Trajectory integrate_trajectory(const VelocityField& field, const Eigen::VectorXd& x1,
                                const FlowConfig& cfg);

// Pushes n_gen standard-normal draws through the flow. Draw i comes from
// substream i of seed and columns are processed in blocks of 256, so the
// output does not depend on `parallel`.
Eigen::MatrixXd push_samples(const VelocityField& field, int dim, std::uint64_t seed,
                             Eigen::Index n_gen, const FlowConfig& cfg, int parallel = 1);

// One row per point; a leading comment line carries t_end, field id and seed.
void write_samples_csv(std::ostream& out, const Eigen::MatrixXd& samples, double t_end,
                       const std::string& field_id, std::uint64_t seed);

// Two-flow bound in the flows' own time, starting from P_0 at time 0:
//   sqrt(t) * ( int_0^t E_{x ~ P_s} w(s, t) ||v_hat - v||^2 ds )^{1/2}
// with w = exp(2 int_s^t L_u du) (Proof) or exp(2 int_s^t exp(L_u) du) (Stated).
enum class BoundExponent { Proof, Stated };

struct BoundEstimate {
  double value = 0.0;
  double std_error = 0.0;       // delta-method MC standard error of value
  double max_log_weight = 0.0;  // largest exponent encountered
};

using PointSampler = std::function<Eigen::VectorXd(double s, Engine& rng)>;

// s is stratified over [0, t]; x ~ P_s from `sampler`. Throws NumericalError
// if the exponent integral exceeds 700.
BoundEstimate w2_bound_rhs(const VelocityField& v_hat, const VelocityField& v_true,
                           const PointSampler& sampler, const std::function<double(double)>& lip,
                           double t, int mc, std::uint64_t seed,
                           BoundExponent variant = BoundExponent::Proof);

// Closed-form flows for the identity check.
struct KnownFlows {
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x0, double s)> flow;  // phi_{0,s}
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x0, double s)> flow_hat;  // phi_hat_{0,s}
  // d phi_hat_{s,T} / dx evaluated at x.
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& x, double s, double T)> jacobian_hat;
};

struct AlekseevGrobner {
  Eigen::VectorXd lhs;
  Eigen::VectorXd rhs;
  double residual = 0.0;  // ||lhs - rhs||
};

// Composite Simpson over quad_steps (rounded up to even) panels of [0, T].
AlekseevGrobner alekseev_grobner_check(const VelocityField& v_hat, const VelocityField& v_true,
                                       const KnownFlows& flows, const Eigen::VectorXd& x0, double T,
                                       int quad_steps);

}  // namespace fmlab
