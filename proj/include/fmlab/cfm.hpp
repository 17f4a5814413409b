#pragma once

#include <cstdint>
#include <functional>
#include <memory>

#include <Eigen/Dense>

#include "fmlab/schedules.hpp"

namespace fmlab {

// Maps points X (d x n, one point per column) and per-column reverse times
// t (n) to velocities (d x n).
using VelocityField =
    std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, const Eigen::VectorXd& t)>;

// Evaluates `field` with every column at the same time t.
Eigen::MatrixXd eval_at(const VelocityField& field, const Eigen::MatrixXd& x, double t);

// Teaching pair at (x_t, t): x_t = sigma_t eps + m_t x1, v = sigma'_t eps + m'_t x1.
struct PathSample {
  double t = 0.0;
  Eigen::VectorXd x_t;
  Eigen::VectorXd v_target;
  Eigen::VectorXd eps;
};

// Deterministic construction from a given eps.
PathSample path_point(const Schedule& schedule, double t, const Eigen::VectorXd& x1,
                      const Eigen::VectorXd& eps);

// eps ~ N(0, I) drawn from `seed`; t must lie in [t0, 1].
PathSample sample_path_point(const Schedule& schedule, double t, const Eigen::VectorXd& x1,
                             std::uint64_t seed, double t0 = 0.0);

// sigma'(x - m x1) / sigma + m' x1. Throws SingularityError when sigma < 1e-300.
Eigen::VectorXd conditional_velocity(const Schedule& schedule, double t, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& x1);

// Exact averaged field and marginal density for an empirical target
// (1/n) sum_j delta_{y_j}. Immutable after construction.
class EmpiricalOracle {
 public:
  EmpiricalOracle(Eigen::MatrixXd data, Schedule schedule);

  const Eigen::MatrixXd& data() const { return data_; }
  const Schedule& schedule() const { return schedule_; }
  Eigen::Index dim() const { return data_.rows(); }
  Eigen::Index size() const { return data_.cols(); }

 private:
  Eigen::MatrixXd data_;
  Schedule schedule_;
};

// Posterior weights w_j(x, t) proportional to exp(-||x - m y_j||^2 / 2 sigma^2),
// stabilized by max subtraction.
Eigen::VectorXd posterior_weights(const EmpiricalOracle& oracle, double t, const Eigen::VectorXd& x);

Eigen::VectorXd oracle_velocity(const EmpiricalOracle& oracle, double t, const Eigen::VectorXd& x);
Eigen::MatrixXd oracle_velocity(const EmpiricalOracle& oracle, const Eigen::MatrixXd& x,
                                const Eigen::VectorXd& t);

// p_t(x) = (1/n) sum_j N(x; m_t y_j, sigma_t^2 I).
double oracle_density(const EmpiricalOracle& oracle, double t, const Eigen::VectorXd& x);

VelocityField as_field(std::shared_ptr<const EmpiricalOracle> oracle);

struct LossEstimate {
  double normalized = 0.0;    // mean over t ~ U[t_lo, t_hi]
  double unnormalized = 0.0;  // normalized * (t_hi - t_lo), the dt-integral form
  double std_error = 0.0;       // across data points
};

// Monte-Carlo flow-matching loss (1/n) sum_i l(x_i) with mc stratified draws
// of t per datum and eps ~ N(0, I). Datum i draws from substream i of seed.
LossEstimate fm_loss(const VelocityField& field, const Eigen::MatrixXd& data,
                     const Schedule& schedule, double t_lo, double t_hi, std::uint64_t seed,
                     int mc, double t0 = 0.0);

}  // namespace fmlab
