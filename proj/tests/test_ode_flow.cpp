#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include <gtest/gtest.h>

#include "fmlab/cfm.hpp"
#include "fmlab/error.hpp"
#include "fmlab/ode_flow.hpp"
#include "fmlab/rng.hpp"
#include "fmlab/wasserstein.hpp"

using namespace fmlab;

namespace {
VelocityField linear(double a) {
  return [a](const Eigen::MatrixXd& x, const Eigen::VectorXd&) { return (a * x).eval(); };
}

VelocityField x_over_t() {
  return [](const Eigen::MatrixXd& x, const Eigen::VectorXd& t) {
    return (x.array().rowwise() / t.transpose().array()).matrix().eval();
  };
}

FlowConfig rk4(int steps, double t_end, StepSpacing spacing = StepSpacing::Logarithmic) {
  FlowConfig c;
  c.steps = steps;
  c.t_end = t_end;
  c.spacing = spacing;
  return c;
}

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }
}  // namespace

TEST(OdeFlow, ConfigValidation) {
  FlowConfig c;
  EXPECT_NO_THROW(check_config(c));
  c.t_end = 0.0;
  EXPECT_THROW(check_config(c), ParameterError);
  c = {};
  c.steps = 0;
  EXPECT_THROW(check_config(c), ParameterError);
  c = {};
  c.method = StepMethod::AdaptiveRK45;
  c.tol = 0.1;
  EXPECT_THROW(check_config(c), ParameterError);
  c.tol = 0.0;
  EXPECT_THROW(check_config(c), ParameterError);
  c.tol = 1e-2;
  EXPECT_NO_THROW(check_config(c));
}

TEST(OdeFlow, TimeGridHasBreakpointsAndRefinement) {
  FlowConfig c = rk4(10, 1e-2);
  c.breakpoints = {0.5, 0.25, 0.03, 2.0};
  const std::vector<double> g = time_grid(c);
  EXPECT_EQ(g.front(), 1.0);
  EXPECT_EQ(g.back(), 1e-2);
  for (double b : {0.5, 0.25, 0.03}) EXPECT_NE(std::find(g.begin(), g.end(), b), g.end());
  EXPECT_TRUE(std::is_sorted(g.rbegin(), g.rend()));
  c.start_refinement = 5;
  const std::vector<double> r = time_grid(c);
  EXPECT_EQ(r.size(), g.size() + 5);
  EXPECT_LT(1.0 - r[1], 1.0 - r[2]);
}

TEST(OdeFlow, SingleAtomAffineClosedForm) {
  const Eigen::VectorXd x1 = Eigen::Vector2d(0.7, -1.3);
  const Eigen::VectorXd out = integrate(x_over_t(), x1, rk4(200, 1e-3));
  EXPECT_LE((out - 1e-3 * x1).norm() / (1e-3 * x1).norm(), 1e-8);

  // Same through the oracle.
  const auto oracle = std::make_shared<const EmpiricalOracle>(Eigen::MatrixXd::Zero(2, 1), Schedule::affine());
  const Eigen::VectorXd via = integrate(as_field(oracle), x1, rk4(200, 1e-3));
  EXPECT_LE((via - 1e-3 * x1).norm() / (1e-3 * x1).norm(), 1e-8);
}

TEST(OdeFlow, ConstantAndLinearFields) {
  const VelocityField c = [](const Eigen::MatrixXd& x, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Constant(x.rows(), x.cols(), 0.3).eval();
  };
  for (StepMethod m : {StepMethod::Euler, StepMethod::RK4, StepMethod::AdaptiveRK45}) {
    FlowConfig cfg = rk4(37, 1e-3);
    cfg.method = m;
    EXPECT_NEAR(integrate(c, v1(0.5), cfg)(0), 0.5 + 0.3 * (1e-3 - 1.0), 1e-12);
  }
  const double x = integrate(linear(-1.0), v1(1.0), rk4(200, 1e-3))(0);
  EXPECT_NEAR(x, std::exp(1.0 - 1e-3), 1e-8 * std::exp(1.0));
  FlowConfig ad = rk4(1, 1e-3);
  ad.method = StepMethod::AdaptiveRK45;
  ad.tol = 1e-10;
  EXPECT_NEAR(integrate(linear(-1.0), v1(1.0), ad)(0), std::exp(1.0 - 1e-3), 1e-7);
}

TEST(OdeFlow, Rk4Order) {
  // x / t has solutions linear in t, which RK4 reproduces to rounding, so the
  // order is measured on the VP single-atom field x / (2t) with x = x1 sqrt(t).
  const auto o = std::make_shared<const EmpiricalOracle>(Eigen::MatrixXd::Zero(1, 1),
                                                         Schedule::variance_preserving());
  std::vector<double> err;
  for (int steps : {50, 100, 200}) {
    EXPECT_NEAR(integrate(x_over_t(), v1(1.0), rk4(steps, 1e-3))(0), 1e-3, 1e-15);
    err.push_back(std::abs(integrate(as_field(o), v1(1.0), rk4(steps, 1e-3))(0) - std::sqrt(1e-3)));
  }
  for (int k = 0; k < 2; ++k) {
    const double ratio = err[k] / err[k + 1];
    EXPECT_GT(ratio, 8.0) << k;
    EXPECT_LT(ratio, 32.0) << k;
  }
}

TEST(OdeFlow, Semigroup) {
  Eigen::MatrixXd y(1, 3);
  y << -0.6, 0.1, 0.8;
  const auto o = std::make_shared<const EmpiricalOracle>(y, Schedule::affine());
  const VelocityField f = as_field(o);
  const double T0 = 1e-2;
  FlowConfig whole = rk4(400, T0);
  FlowConfig a = rk4(400, 0.5);
  FlowConfig b = rk4(400, T0);
  b.t_start = 0.5;
  for (double x1 : {-1.2, 0.3, 2.0}) {
    const double direct = integrate(f, v1(x1), whole)(0);
    const double split = integrate(f, integrate(f, v1(x1), a), b)(0);
    EXPECT_NEAR(direct, split, 1e-8) << x1;
  }
}

TEST(OdeFlow, SingleAtomContraction) {
  for (const Schedule& s : {Schedule::affine(), Schedule::variance_preserving()}) {
    const auto o = std::make_shared<const EmpiricalOracle>(Eigen::MatrixXd::Zero(2, 1), s);
    FlowConfig cfg = rk4(200, 1e-3);
    cfg.start_refinement = 40;
    const Eigen::VectorXd x1 = Eigen::Vector2d(1.1, -0.4);
    const Trajectory tr = integrate_trajectory(as_field(o), x1, cfg);
    for (std::size_t k = 1; k < tr.t.size(); ++k) {
      EXPECT_LT(tr.x[k].norm(), tr.x[k - 1].norm());
      EXPECT_NEAR(tr.x[k].norm(), x1.norm() * eval(s, tr.t[k]).sigma, 1e-6 * x1.norm());
    }
  }
}

TEST(OdeFlow, NonFiniteStateReportsDiagnostics) {
  const VelocityField blow = [](const Eigen::MatrixXd& x, const Eigen::VectorXd&) {
    return (1e200 * x.array().square()).matrix().eval();
  };
  Eigen::MatrixXd x(1, 2);
  x << 0.0, 5.0;
  try {
    integrate(blow, x, rk4(10, 0.1));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("trajectory 1"), std::string::npos) << e.what();
  }
}

TEST(OdeFlow, PushSingleAtomStd) {
  const auto o = std::make_shared<const EmpiricalOracle>(Eigen::MatrixXd::Zero(1, 1), Schedule::affine());
  const Eigen::MatrixXd s = push_samples(as_field(o), 1, 5, 10000, rk4(200, 1e-3));
  const double mean = s.mean();
  const double sd = std::sqrt((s.array() - mean).square().sum() / (s.cols() - 1));
  EXPECT_NEAR(sd, 1e-3, 0.05e-3);
  EXPECT_THROW(push_samples(as_field(o), 1, 5, 0, rk4(200, 1e-3)), ParameterError);
}

TEST(OdeFlow, PushTwoAtomsBimodal) {
  Eigen::MatrixXd y(1, 2);
  y << -1.0, 1.0;
  const Schedule sch = Schedule::affine();
  const auto o = std::make_shared<const EmpiricalOracle>(y, sch);
  const double T0 = 1e-2, m = eval(sch, T0).m;
  const Eigen::MatrixXd s = push_samples(as_field(o), 1, 6, 10000, rk4(200, T0));
  double pos = 0, neg = 0;
  int np = 0, nn = 0;
  for (Eigen::Index i = 0; i < s.cols(); ++i) {
    if (s(0, i) > 0) { pos += s(0, i); ++np; } else { neg += s(0, i); ++nn; }
  }
  EXPECT_NEAR(pos / np, m, 0.05);
  EXPECT_NEAR(neg / nn, -m, 0.05);
  EXPECT_NEAR(static_cast<double>(np) / s.cols(), 0.5, 0.03);
}

TEST(OdeFlow, PushIndependentOfParallelism) {
  Eigen::MatrixXd y(2, 3);
  y << -0.5, 0.2, 0.9, 0.1, -0.8, 0.4;
  const auto o = std::make_shared<const EmpiricalOracle>(y, Schedule::variance_preserving());
  FlowConfig cfg = rk4(50, 1e-2);
  cfg.start_refinement = 40;
  const Eigen::MatrixXd a = push_samples(as_field(o), 2, 7, 1000, cfg, 1);
  const Eigen::MatrixXd b = push_samples(as_field(o), 2, 7, 1000, cfg, 8);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.leftCols(300), push_samples(as_field(o), 2, 7, 300, cfg, 3));
}

TEST(OdeFlow, SamplesCsv) {
  Eigen::MatrixXd s(2, 2);
  s << 0.5, -1.0, 0.25, 3.0;
  std::ostringstream out;
  write_samples_csv(out, s, 1e-3, "oracle", 42);
  const std::string text = out.str();
  EXPECT_EQ(text.rfind("# t_end=0.001", 0), 0u) << text;
  EXPECT_NE(text.find("field=oracle"), std::string::npos);
  EXPECT_NE(text.find("seed=42"), std::string::npos);
  EXPECT_NE(text.find("0.5,0.25\n"), std::string::npos);
  EXPECT_NE(text.find("-1,3\n"), std::string::npos);
}

TEST(OdeFlow, BoundExamples) {
  const PointSampler gauss = [](double, Engine& rng) { return standard_normal(rng, 3, 1).col(0).eval(); };
  const auto zero_lip = [](double) { return 0.0; };
  EXPECT_EQ(w2_bound_rhs(linear(-1.0), linear(-1.0), gauss, zero_lip, 0.7, 100, 1).value, 0.0);

  const double delta = 0.2;
  const VelocityField shifted = [delta](const Eigen::MatrixXd& x, const Eigen::VectorXd&) {
    return (-x.array() + delta).matrix().eval();
  };
  const BoundEstimate b = w2_bound_rhs(shifted, linear(-1.0), gauss, zero_lip, 0.7, 100, 1);
  EXPECT_NEAR(b.value, 0.7 * delta * std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(b.std_error, 0.0, 1e-12);

  const auto huge = [](double) { return 1000.0; };
  EXPECT_THROW(w2_bound_rhs(shifted, linear(-1.0), gauss, huge, 1.0, 10, 1), NumericalError);
  // Stated exponent uses exp(L): strictly larger weight.
  const auto one = [](double) { return 1.0; };
  const double proof = w2_bound_rhs(shifted, linear(-1.0), gauss, one, 0.5, 50, 2).value;
  const double stated = w2_bound_rhs(shifted, linear(-1.0), gauss, one, 0.5, 50, 2, BoundExponent::Stated).value;
  EXPECT_GT(stated, proof);
}

TEST(OdeFlow, BoundSandwichLinearPair) {
  // Forward flows from P_0 = N(0, 1): x e^{-s} and x e^{-1.1 s}.
  const double t = 1.0;
  const PointSampler p_s = [](double s, Engine& rng) {
    return (std::exp(-s) * standard_normal(rng, 1, 1).col(0)).eval();
  };
  const auto lip = [](double) { return 1.1; };
  int violations = 0;
  for (int rep = 0; rep < 5; ++rep) {
    const BoundEstimate b = w2_bound_rhs(linear(-1.1), linear(-1.0), p_s, lip, t, 2000, 100 + rep);
    Engine rng = make_engine(200 + rep, 0);
    const Eigen::MatrixXd x0 = standard_normal(rng, 1, 10000);
    const Eigen::MatrixXd x0b = standard_normal(rng, 1, 10000);
    const double w = w_p_1d(make_measure(std::exp(-t) * x0), make_measure(std::exp(-1.1 * t) * x0b), 2.0);
    if (w > b.value + 3.0 * b.std_error) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(OdeFlow, AlekseevGrobner) {
  const auto make = [](double a, double b) {
    KnownFlows f;
    f.flow = [a](const Eigen::VectorXd& x0, double s) { return (x0 * std::exp(a * s)).eval(); };
    f.flow_hat = [b](const Eigen::VectorXd& x0, double s) { return (x0 * std::exp(b * s)).eval(); };
    f.jacobian_hat = [b](const Eigen::VectorXd& x, double s, double T) {
      return (Eigen::MatrixXd::Identity(x.size(), x.size()) * std::exp(b * (T - s))).eval();
    };
    return f;
  };
  const Eigen::VectorXd x0 = v1(1.0);
  EXPECT_LE(alekseev_grobner_check(linear(-1.0), linear(-1.0), make(-1, -1), x0, 1.0, 100).residual, 1e-12);
  EXPECT_LE(alekseev_grobner_check(linear(-2.0), linear(-1.0), make(-1, -2), x0, 1.0, 10000).residual, 1e-6);

  const double c = 0.7;
  KnownFlows shift;
  shift.flow = [](const Eigen::VectorXd& x0, double) { return x0; };
  shift.flow_hat = [c](const Eigen::VectorXd& x0, double s) { return (x0.array() + c * s).matrix().eval(); };
  shift.jacobian_hat = [](const Eigen::VectorXd& x, double, double) {
    return Eigen::MatrixXd::Identity(x.size(), x.size()).eval();
  };
  const VelocityField zero = linear(0.0);
  const VelocityField cst = [c](const Eigen::MatrixXd& x, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Constant(x.rows(), x.cols(), c).eval();
  };
  const AlekseevGrobner ag = alekseev_grobner_check(cst, zero, shift, Eigen::Vector2d(0.3, -0.1), 1.5, 11);
  EXPECT_LE(ag.residual, 1e-10);
  EXPECT_NEAR(ag.lhs(0), c * 1.5, 1e-14);
}
