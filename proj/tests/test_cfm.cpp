#include <cmath>
#include <memory>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "fmlab/cfm.hpp"
#include "fmlab/error.hpp"
#include "fmlab/rng.hpp"
#include "fmlab/stats.hpp"

using namespace fmlab;

namespace {
Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }

Eigen::MatrixXd atoms(std::uint64_t seed, int d, int n) {
  Engine rng = make_engine(seed, 0);
  Eigen::MatrixXd y(d, n);
  for (auto& v : y.reshaped()) v = 2.0 * uniform01(rng) - 1.0;
  return y;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
}  // namespace

TEST(Cfm, PathPointAffine) {
  const PathSample p = path_point(Schedule::affine(), 0.5, v1(1.0), v1(0.0));
  EXPECT_DOUBLE_EQ(p.x_t(0), 0.5);
  EXPECT_DOUBLE_EQ(p.v_target(0), -1.0);
}

TEST(Cfm, AffineTeacherIsMinusDifference) {
  Engine rng = make_engine(3, 0);
  for (int k = 0; k < 50; ++k) {
    const Eigen::VectorXd x1 = standard_normal(rng, 2, 1).col(0);
    const Eigen::VectorXd eps = standard_normal(rng, 2, 1).col(0);
    const PathSample p = path_point(Schedule::affine(), 0.1 + 0.8 * uniform01(rng), x1, eps);
    EXPECT_LT((p.v_target + (x1 - eps)).norm(), 1e-14);
  }
}

TEST(Cfm, PathPointVp) {
  const PathSample p = path_point(Schedule::variance_preserving(), 0.64, v1(0.0), v1(1.0));
  EXPECT_NEAR(p.x_t(0), 0.8, 1e-15);
  EXPECT_NEAR(p.v_target(0), 0.625, 1e-15);
}

TEST(Cfm, SamplePathPointInvariantAndDomain) {
  const Schedule s = Schedule::variance_preserving();
  const PathSample p = sample_path_point(s, 0.3, v1(0.7), 42);
  const ScheduleValue e = eval(s, 0.3);
  EXPECT_DOUBLE_EQ(p.x_t(0), e.sigma * p.eps(0) + e.m * 0.7);
  EXPECT_DOUBLE_EQ(p.v_target(0), e.dsigma * p.eps(0) + e.dm * 0.7);
  const PathSample q = sample_path_point(s, 0.3, v1(0.7), 42);
  EXPECT_EQ(p.eps(0), q.eps(0));
  EXPECT_THROW(sample_path_point(s, 0.05, v1(0.0), 1, 0.1), DomainError);
  EXPECT_THROW(sample_path_point(s, 1.5, v1(0.0), 1), DomainError);
}

TEST(Cfm, ConditionalVelocityExamples) {
  EXPECT_DOUBLE_EQ(conditional_velocity(Schedule::affine(), 0.5, v1(0.5), v1(1.0))(0), -1.0);
  EXPECT_NEAR(conditional_velocity(Schedule::variance_preserving(), 0.64, v1(0.8), v1(0.0))(0), 0.625,
              1e-15);
  for (const Schedule& s : {Schedule::affine(), Schedule::variance_preserving(),
                            Schedule::power_law(1.0, 0.7, 0.5, 1.5)}) {
    const ScheduleValue e = eval(s, 0.37);
    const Eigen::VectorXd x1 = Eigen::Vector2d(0.3, -0.6);
    EXPECT_LT((conditional_velocity(s, 0.37, e.m * x1, x1) - e.dm * x1).norm(), 1e-15);
  }
}

TEST(Cfm, ConditionalVelocitySingularity) {
  // sigma = 1e-310 underflows the division guard.
  const Schedule s = Schedule::power_law(1e-300, 1.0, 1.0, 1.0);
  EXPECT_THROW(conditional_velocity(s, 1e-10, v1(0.0), v1(0.0)), SingularityError);
}

TEST(Cfm, OracleSingleAtom) {
  const EmpiricalOracle zero(Eigen::MatrixXd::Zero(1, 1), Schedule::affine());
  for (double t : {0.01, 0.3, 0.9, 1.0})
    for (double x : {-2.0, 0.1, 1.5}) EXPECT_NEAR(oracle_velocity(zero, t, v1(x))(0), x / t, 1e-12);

  for (const Schedule& s : {Schedule::affine(), Schedule::variance_preserving()}) {
    const Eigen::VectorXd y = Eigen::Vector2d(0.4, -0.2);
    const EmpiricalOracle one(y, s);
    for (double t : {0.02, 0.25, 0.5, 0.75, 0.99})
      for (double x : {-1.0, 0.0, 0.6}) {
        const Eigen::VectorXd xv = Eigen::Vector2d(x, 0.5 * x + 0.1);
        EXPECT_EQ(oracle_velocity(one, t, xv), conditional_velocity(s, t, xv, y));
      }
  }
}

TEST(Cfm, OracleTwoAtomsSymmetric) {
  Eigen::MatrixXd y(1, 2);
  y << -1.0, 1.0;
  const EmpiricalOracle o(y, Schedule::affine());
  EXPECT_NEAR(oracle_velocity(o, 0.5, v1(0.0))(0), 0.0, 1e-15);
  // Direct softmax at an asymmetric point.
  const double t = 0.5, x = 0.3, m = 0.5, sg = 0.5;
  const double a = std::exp(-std::pow(x + m, 2) / (2 * sg * sg));
  const double b = std::exp(-std::pow(x - m, 2) / (2 * sg * sg));
  const double ybar = (b - a) / (a + b);
  EXPECT_NEAR(oracle_velocity(o, t, v1(x))(0), (x - m * ybar) / sg - ybar, 1e-13);
}

TEST(Cfm, PosteriorWeightsSumToOne) {
  const Eigen::MatrixXd y = atoms(5, 2, 40);
  for (const Schedule& s : {Schedule::affine(), Schedule::variance_preserving()}) {
    const EmpiricalOracle o(y, s);
    Engine rng = make_engine(6, 0);
    for (double t : {1e-6, 1e-3, 0.1, 0.5, 1.0}) {
      for (int k = 0; k < 20; ++k) {
        const Eigen::VectorXd x = 3.0 * standard_normal(rng, 2, 1).col(0);
        const Eigen::VectorXd w = posterior_weights(o, t, x);
        EXPECT_NEAR(w.sum(), 1.0, 1e-12);
        EXPECT_GE(w.minCoeff(), 0.0);
        EXPECT_TRUE(oracle_velocity(o, t, x).allFinite());
      }
    }
  }
}

TEST(Cfm, BatchOracleMatchesPointwise) {
  const EmpiricalOracle o(atoms(8, 2, 15), Schedule::variance_preserving());
  Engine rng = make_engine(9, 0);
  const Eigen::MatrixXd x = standard_normal(rng, 2, 30);
  Eigen::VectorXd t(30);
  for (auto& v : t) v = 0.01 + 0.98 * uniform01(rng);
  const Eigen::MatrixXd v = oracle_velocity(o, x, t);
  for (int c = 0; c < 30; ++c) EXPECT_LT((v.col(c) - oracle_velocity(o, t(c), x.col(c))).norm(), 1e-14);
  const VelocityField f = as_field(std::make_shared<const EmpiricalOracle>(o));
  EXPECT_LT((f(x, t) - v).norm(), 1e-14);
}

TEST(Cfm, DensityExamples) {
  const EmpiricalOracle zero(Eigen::MatrixXd::Zero(1, 1), Schedule::affine());
  EXPECT_NEAR(oracle_density(zero, 1.0, v1(0.0)), 1.0 / std::sqrt(2 * std::numbers::pi), 1e-15);

  Eigen::MatrixXd y(1, 2);
  y << -1.0, 1.0;
  const EmpiricalOracle two(y, Schedule::affine());
  for (double x : {-1.3, 0.0, 0.4})
    EXPECT_NEAR(oracle_density(two, 1.0, v1(x)), std::exp(-x * x / 2) / std::sqrt(2 * std::numbers::pi),
                1e-15);
}

TEST(Cfm, DensityIsGaussianKde) {
  const Eigen::MatrixXd y = atoms(11, 2, 25);
  const EmpiricalOracle o(y, Schedule::variance_preserving());
  Engine rng = make_engine(12, 0);
  for (int k = 0; k < 1000; ++k) {
    const double t = 0.01 + 0.99 * uniform01(rng);
    const Eigen::VectorXd x = 1.5 * standard_normal(rng, 2, 1).col(0);
    const ScheduleValue e = eval(o.schedule(), t);
    double kde = 0.0;
    for (int j = 0; j < y.cols(); ++j)
      kde += std::exp(-(x - e.m * y.col(j)).squaredNorm() / (2 * e.sigma * e.sigma)) /
             (2 * std::numbers::pi * e.sigma * e.sigma);
    kde /= y.cols();
    const double p = oracle_density(o, t, x);
    EXPECT_GT(p, 0.0);
    EXPECT_NEAR(p, kde, 1e-12 * std::max(1.0, kde));
  }
}

TEST(Cfm, MarginalConsistencyKs) {
  // x_t for x1 drawn from the data must follow the KDE at t.
  const Eigen::MatrixXd y = atoms(13, 1, 20);
  const Schedule s = Schedule::variance_preserving();
  const double t = 0.2;
  const ScheduleValue e = eval(s, t);
  const int total = 100000;
  std::vector<double> xs(total);
  Engine pick = make_engine(14, 0);
  for (int i = 0; i < total; ++i) {
    const int j = static_cast<int>(pick() % y.cols());
    xs[i] = sample_path_point(s, t, y.col(j), substream_seed(15, i)).x_t(0);
  }
  auto mix_cdf = [&](double x) {
    double c = 0.0;
    for (int j = 0; j < y.cols(); ++j) c += normal_cdf((x - e.m * y(0, j)) / e.sigma);
    return c / y.cols();
  };
  EXPECT_LT(stats::ks_statistic(xs, mix_cdf), stats::ks_critical_value(total, 1e-3));
}

TEST(Cfm, ContinuityEquationResidual) {
  const Eigen::MatrixXd y = atoms(17, 1, 12);
  for (const Schedule& s : {Schedule::affine(), Schedule::variance_preserving()}) {
    const EmpiricalOracle o(y, s);
    const double h = 1e-4;
    auto flux = [&](double x, double t) { return oracle_density(o, t, v1(x)) * oracle_velocity(o, t, v1(x))(0); };
    double max_dt = 0.0, max_res = 0.0;
    for (double t = 0.1; t <= 0.9 + 1e-12; t += 0.02) {
      for (double x = -2.0; x <= 2.0 + 1e-12; x += 0.02) {
        const double dpdt = (oracle_density(o, t + h, v1(x)) - oracle_density(o, t - h, v1(x))) / (2 * h);
        const double dflux = (flux(x + h, t) - flux(x - h, t)) / (2 * h);
        max_dt = std::max(max_dt, std::abs(dpdt));
        max_res = std::max(max_res, std::abs(dpdt + dflux));
      }
    }
    EXPECT_LE(max_res, 1e-3 * max_dt) << schedule_id(s);
  }
}

TEST(Cfm, LossExamples) {
  const Eigen::MatrixXd zero_atom = Eigen::MatrixXd::Zero(1, 1);
  const VelocityField zero = [](const Eigen::MatrixXd& x, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Zero(x.rows(), x.cols()).eval();
  };
  // Teacher is sigma' eps = eps under Affine, so E||v||^2 = 1.
  const int mc = 20000;
  const LossEstimate l = fm_loss(zero, zero_atom, Schedule::affine(), 0.5, 1.0, 21, mc);
  EXPECT_NEAR(l.normalized, 1.0, 3.0 / std::sqrt(1.0 * mc));
  EXPECT_DOUBLE_EQ(l.unnormalized, 0.5 * l.normalized);

  // Replaying the conditional velocity of the (single) atom reproduces the teacher.
  const Eigen::MatrixXd atom = Eigen::MatrixXd::Constant(1, 1, 0.4);
  for (const Schedule& s : {Schedule::affine(), Schedule::variance_preserving()}) {
    const VelocityField replay = [&](const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
      Eigen::MatrixXd v(x.rows(), x.cols());
      for (Eigen::Index c = 0; c < x.cols(); ++c) v.col(c) = conditional_velocity(s, t(c), x.col(c), atom.col(0));
      return v;
    };
    EXPECT_NEAR(fm_loss(replay, atom, s, 0.1, 0.9, 22, 50).normalized, 0.0, 1e-20);
  }
}

TEST(Cfm, OracleMinimizesLoss) {
  const Eigen::MatrixXd y = atoms(23, 1, 16);
  const auto o = std::make_shared<const EmpiricalOracle>(y, Schedule::affine());
  const VelocityField f = as_field(o);
  const VelocityField shifted = [f](const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
    return (f(x, t).array() + 0.1).matrix().eval();
  };
  const double a = fm_loss(f, y, o->schedule(), 0.05, 1.0, 24, 4000).normalized;
  const double b = fm_loss(shifted, y, o->schedule(), 0.05, 1.0, 24, 4000).normalized;
  EXPECT_LT(a, b);
}

TEST(Cfm, LossDeterminismAndDomain) {
  const Eigen::MatrixXd y = atoms(25, 2, 8);
  const VelocityField f = as_field(std::make_shared<const EmpiricalOracle>(y, Schedule::affine()));
  const double a = fm_loss(f, y, Schedule::affine(), 0.2, 0.7, 26, 10).normalized;
  EXPECT_EQ(a, fm_loss(f, y, Schedule::affine(), 0.2, 0.7, 26, 10).normalized);
  EXPECT_THROW(fm_loss(f, y, Schedule::affine(), 0.05, 0.7, 26, 10, 0.1), DomainError);
  EXPECT_THROW(fm_loss(f, y, Schedule::affine(), 0.7, 0.2, 26, 10), DomainError);
  EXPECT_THROW(fm_loss(f, y, Schedule::affine(), 0.2, 1.2, 26, 10), DomainError);
  EXPECT_THROW(fm_loss(f, y, Schedule::affine(), 0.2, 0.7, 26, 0), ParameterError);
}
