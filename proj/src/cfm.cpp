#include "fmlab/cfm.hpp"

#include <cmath>

#include "fmlab/error.hpp"
#include "fmlab/rng.hpp"

namespace fmlab {

namespace {
constexpr double kSigmaFloor = 1e-300;

void check_time(double t, double t0) {
  if (!(t >= t0) || !(t > 0.0) || t > 1.0)
    throw DomainError("time " + std::to_string(t) + " outside [T0, 1]");
}
}  // namespace

Eigen::MatrixXd eval_at(const VelocityField& field, const Eigen::MatrixXd& x, double t) {
  return field(x, Eigen::VectorXd::Constant(x.cols(), t));
}

PathSample path_point(const Schedule& schedule, double t, const Eigen::VectorXd& x1,
                      const Eigen::VectorXd& eps) {
  const ScheduleValue s = eval(schedule, t);
  return PathSample{t, s.sigma * eps + s.m * x1, s.dsigma * eps + s.dm * x1, eps};
}

PathSample sample_path_point(const Schedule& schedule, double t, const Eigen::VectorXd& x1,
                             std::uint64_t seed, double t0) {
  check_time(t, t0);
  Engine rng = make_engine(seed, 0);
  return path_point(schedule, t, x1, standard_normal(rng, x1.size(), 1).col(0));
}

Eigen::VectorXd conditional_velocity(const Schedule& schedule, double t, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& x1) {
  const ScheduleValue s = eval(schedule, t);
  if (!(s.sigma >= kSigmaFloor)) throw SingularityError("conditional_velocity: sigma_t underflow");
  return s.dsigma * (x - s.m * x1) / s.sigma + s.dm * x1;
}

EmpiricalOracle::EmpiricalOracle(Eigen::MatrixXd data, Schedule schedule)
    : data_(std::move(data)), schedule_(schedule) {
  if (data_.cols() < 1 || data_.rows() < 1) throw ParameterError("EmpiricalOracle: empty data");
}

namespace {

// Log-weights -||x - m y_j||^2 / (2 sigma^2) for all atoms.
Eigen::VectorXd log_kernel(const EmpiricalOracle& o, const ScheduleValue& s, const Eigen::VectorXd& x) {
  const Eigen::MatrixXd diff = (s.m * o.data()).colwise() - x;
  return -diff.colwise().squaredNorm().transpose() / (2.0 * s.sigma * s.sigma);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double mx = logits.maxCoeff();
  Eigen::VectorXd w = (logits.array() - mx).exp().matrix();
  return w / w.sum();
}

Eigen::VectorXd velocity_from(const EmpiricalOracle& o, const ScheduleValue& s,
                              const Eigen::VectorXd& x) {
  const Eigen::VectorXd w = softmax(log_kernel(o, s, x));
  const Eigen::VectorXd ybar = o.data() * w;
  return s.dsigma * (x - s.m * ybar) / s.sigma + s.dm * ybar;
}

}  // namespace

Eigen::VectorXd posterior_weights(const EmpiricalOracle& oracle, double t, const Eigen::VectorXd& x) {
  const ScheduleValue s = eval(oracle.schedule(), t);
  if (!(s.sigma >= kSigmaFloor)) throw SingularityError("posterior_weights: sigma_t underflow");
  return softmax(log_kernel(oracle, s, x));
}

Eigen::VectorXd oracle_velocity(const EmpiricalOracle& oracle, double t, const Eigen::VectorXd& x) {
  const ScheduleValue s = eval(oracle.schedule(), t);
  if (!(s.sigma >= kSigmaFloor)) throw SingularityError("oracle_velocity: sigma_t underflow");
  return velocity_from(oracle, s, x);
}

Eigen::MatrixXd oracle_velocity(const EmpiricalOracle& oracle, const Eigen::MatrixXd& x,
                                const Eigen::VectorXd& t) {
  Eigen::MatrixXd v(x.rows(), x.cols());
  double last_t = NAN;
  ScheduleValue s{};
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    if (t(c) != last_t) {
      s = eval(oracle.schedule(), t(c));
      if (!(s.sigma >= kSigmaFloor)) throw SingularityError("oracle_velocity: sigma_t underflow");
      last_t = t(c);
    }
    v.col(c) = velocity_from(oracle, s, x.col(c));
  }
  return v;
}

double oracle_density(const EmpiricalOracle& oracle, double t, const Eigen::VectorXd& x) {
  const ScheduleValue s = eval(oracle.schedule(), t);
  const Eigen::VectorXd logits = log_kernel(oracle, s, x);
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  const double d = static_cast<double>(oracle.dim());
  return std::exp(lse - std::log(static_cast<double>(oracle.size())) -
                  0.5 * d * std::log(2.0 * M_PI * s.sigma * s.sigma));
}

VelocityField as_field(std::shared_ptr<const EmpiricalOracle> oracle) {
  return [oracle](const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
    return oracle_velocity(*oracle, x, t);
  };
}

LossEstimate fm_loss(const VelocityField& field, const Eigen::MatrixXd& data,
                     const Schedule& schedule, double t_lo, double t_hi, std::uint64_t seed,
                     int mc, double t0) {
  if (!(t_lo >= t0) || !(t_lo > 0.0) || !(t_lo < t_hi) || t_hi > 1.0)
    throw DomainError("fm_loss: require T0 <= t_lo < t_hi <= 1");
  if (mc < 1) throw ParameterError("fm_loss: mc must be >= 1");
  const Eigen::Index d = data.rows(), n = data.cols();
  const Eigen::Index total = n * mc;
  Eigen::MatrixXd xt(d, total), target(d, total);
  Eigen::VectorXd times(total);
  for (Eigen::Index i = 0; i < n; ++i) {
    Engine rng = make_engine(seed, static_cast<std::uint64_t>(i));
    for (int k = 0; k < mc; ++k) {
      // One uniform draw per stratum.
      const double t = t_lo + (t_hi - t_lo) * (k + uniform01(rng)) / mc;
      const Eigen::VectorXd eps = standard_normal(rng, d, 1).col(0);
      const ScheduleValue s = eval(schedule, t);
      const Eigen::Index c = i * mc + k;
      xt.col(c) = s.sigma * eps + s.m * data.col(i);
      target.col(c) = s.dsigma * eps + s.dm * data.col(i);
      times(c) = t;
    }
  }
  const Eigen::MatrixXd pred = field(xt, times);
  const Eigen::VectorXd sq = (pred - target).colwise().squaredNorm().transpose();
  Eigen::VectorXd per_datum(n);
  for (Eigen::Index i = 0; i < n; ++i) per_datum(i) = sq.segment(i * mc, mc).mean();
  LossEstimate out;
  out.normalized = per_datum.mean();
  out.unnormalized = out.normalized * (t_hi - t_lo);
  if (n > 1) {
    const double var = (per_datum.array() - out.normalized).square().sum() / (n - 1);
    out.std_error = std::sqrt(var / n);
  } else {
    out.std_error = std::sqrt((sq.array() - sq.mean()).square().sum() / std::max<Eigen::Index>(1, mc - 1) / mc);
  }
  return out;
}

}  // namespace fmlab
