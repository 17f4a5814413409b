// Acceptance suite. One PASS/FAIL line per criterion; exit status is the
// number of failures. Usage: acceptance [fast|long|all] [config] [workdir]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmlab/bspline.hpp"
#include "fmlab/cfm.hpp"
#include "fmlab/harness.hpp"
#include "fmlab/ode_flow.hpp"
#include "fmlab/rng.hpp"
#include "fmlab/stats.hpp"
#include "fmlab/theory.hpp"
#include "fmlab/velocity_net.hpp"
#include "fmlab/wasserstein.hpp"

using namespace fmlab;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-5;
constexpr int kGradMinParams = 64;
constexpr double kClosedFormRelTol = 1e-8;
constexpr double kOrderLo = 8.0, kOrderHi = 32.0;
constexpr double kContinuityRel = 1e-3;
constexpr double kBruteTol = 1e-12;
constexpr double k1dTol = 1e-10;
constexpr double kAgTol = 1e-6;
constexpr double kKdeTol = 1e-12;
constexpr double kKsAlpha = 1e-3;
constexpr double kSplineSlope = -2.5;
constexpr double kInSpanTol = 1e-10;
constexpr int kMaxInversions = 1;
constexpr double kSlopeGap = 0.05;
constexpr double kSlopeTol = 0.15;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

Eigen::VectorXd v1(double a) { return Eigen::VectorXd::Constant(1, a); }

VelocityField linear(double a) {
  return [a](const Eigen::MatrixXd& x, const Eigen::VectorXd&) { return (a * x).eval(); };
}

FlowConfig rk4(int steps, double t_end) {
  FlowConfig c;
  c.steps = steps;
  c.t_end = t_end;
  c.spacing = StepSpacing::Logarithmic;
  return c;
}

Eigen::MatrixXd uniform_atoms(std::uint64_t seed, int d, int n) {
  Engine rng = make_engine(seed, 0);
  Eigen::MatrixXd y(d, n);
  for (auto& v : y.reshaped()) v = 2.0 * uniform01(rng) - 1.0;
  return y;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

Outcome exponent_identities() {
  Engine rng = make_engine(1, 0);
  int mismatches = 0;
  for (int k = 0; k < 20; ++k) {
    const double s = 0.1 + 4.9 * uniform01(rng);
    const int d = 2 + static_cast<int>(rng() % 9);
    if (upper_rate_exponent(s, d, 0.5, 0.0) != minimax_lower_exponent(s, d)) ++mismatches;
  }
  const double u = upper_rate_exponent(1.0, 2, 0.5, 0.0), l = minimax_lower_exponent(1.0, 2);
  return {mismatches == 0 && u == 0.5 && l == 0.5,
          fmt("mismatches %.0f/20, s=1 d=2: upper %.17g lower %.17g", mismatches, u, l)};
}

Outcome gradient_check() {
  const int d = 2;
  VelocityNet net = make_velocity_net(d, {7, 5, 6}, Schedule::affine(), 100, 11, 1e6);
  Engine rng = make_engine(11, 1);
  Eigen::VectorXd theta = get_parameters(net);
  theta += 0.3 * standard_normal(rng, theta.size(), 1).col(0);
  set_parameters(net, theta);
  const int n = 32;
  const Eigen::MatrixXd x = standard_normal(rng, d, n), v = standard_normal(rng, d, n);
  Eigen::VectorXd t(n);
  for (auto& ti : t) ti = 0.05 + 0.95 * uniform01(rng);

  NetGradient g;
  mse_gradient(net, x, t, v, &g);
  const Eigen::VectorXd grad = flatten(g);
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp(i) += h;
    tm(i) -= h;
    set_parameters(net, tp);
    const double fp = mse(net, x, t, v);
    set_parameters(net, tm);
    const double fm = mse(net, x, t, v);
    const double fd = (fp - fm) / (2 * h);
    worst = std::max(worst, std::abs(fd - grad(i)) / std::max(1.0, std::abs(grad(i))));
  }
  set_parameters(net, theta);
  return {worst <= kGradRelTol && theta.size() >= kGradMinParams,
          fmt("%.0f parameters, max relative error %.3g", static_cast<double>(theta.size()), worst)};
}

Outcome closed_form_flow() {
  const auto affine = std::make_shared<const EmpiricalOracle>(Eigen::MatrixXd::Zero(1, 1), Schedule::affine());
  const double x1 = 0.7, T0 = 1e-3;
  const double got = integrate(as_field(affine), v1(x1), rk4(200, T0))(0);
  const double rel = std::abs(got - x1 * T0) / (x1 * T0);
  // Order on the VP single atom (x / 2t, solution x1 sqrt(t)); the affine
  // solution is linear in t and RK4 reproduces it to rounding.
  const auto vp = std::make_shared<const EmpiricalOracle>(Eigen::MatrixXd::Zero(1, 1), Schedule::variance_preserving());
  std::vector<double> err;
  for (int steps : {50, 100, 200})
    err.push_back(std::abs(integrate(as_field(vp), v1(1.0), rk4(steps, T0))(0) - std::sqrt(T0)));
  const double r1 = err[0] / err[1], r2 = err[1] / err[2];
  const bool ok = rel <= kClosedFormRelTol && r1 > kOrderLo && r1 < kOrderHi && r2 > kOrderLo && r2 < kOrderHi;
  return {ok, fmt("affine rel error %.3g; order ratios %.3f %.3f", rel, r1, r2)};
}

Outcome continuity_residual() {
  const Eigen::MatrixXd y = uniform_atoms(17, 1, 12);
  double worst = 0.0;
  for (const Schedule& s : {Schedule::affine(), Schedule::variance_preserving()}) {
    const EmpiricalOracle o(y, s);
    const double h = 1e-4;
    auto flux = [&](double x, double t) { return oracle_density(o, t, v1(x)) * oracle_velocity(o, t, v1(x))(0); };
    double max_dt = 0.0, max_res = 0.0;
    for (int it = 0; it <= 40; ++it)
      for (int ix = 0; ix <= 200; ++ix) {
        const double t = 0.1 + 0.02 * it, x = -2.0 + 0.02 * ix;
        const double dpdt = (oracle_density(o, t + h, v1(x)) - oracle_density(o, t - h, v1(x))) / (2 * h);
        const double dflux = (flux(x + h, t) - flux(x - h, t)) / (2 * h);
        max_dt = std::max(max_dt, std::abs(dpdt));
        max_res = std::max(max_res, std::abs(dpdt + dflux));
      }
    worst = std::max(worst, max_res / max_dt);
  }
  return {worst <= kContinuityRel, fmt("max residual / max |dp/dt| = %.3g", worst)};
}

EmpiricalMeasure cloud(std::uint64_t seed, int d, int n, double shift = 0.0) {
  Engine rng = make_engine(seed, 0);
  return make_measure((standard_normal(rng, d, n).array() + shift).matrix());
}

double brute_force(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p) {
  std::vector<int> perm(a.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) c += std::pow((a.points.col(i) - b.points.col(perm[i])).norm(), p);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::pow(best / a.size(), 1.0 / p);
}

Outcome wasserstein_exactness() {
  double brute = 0.0, oned = 0.0;
  int order = 0;
  for (int k = 0; k < 50; ++k) {
    const EmpiricalMeasure a = cloud(100 + k, 2, 6), b = cloud(200 + k, 2, 6, 0.3);
    for (double p : {1.0, 2.0}) brute = std::max(brute, std::abs(w_p_exact(a, b, p) - brute_force(a, b, p)));
  }
  for (int k = 0; k < 100; ++k) {
    const int n = 5 + k % 60;
    const EmpiricalMeasure a = cloud(300 + k, 1, n), b = cloud(400 + k, 1, n, 0.5);
    for (double p : {1.0, 2.0}) oned = std::max(oned, std::abs(w_p_1d(a, b, p) - w_p_exact(a, b, p)));
  }
  for (int k = 0; k < 100; ++k) {
    const int d = 1 + k % 2;
    const EmpiricalMeasure a = cloud(800 + k, d, 40), b = cloud(900 + k, d, 40, 0.2 * (k % 5));
    if (w_p_exact(a, b, 1.0) > w_p_exact(a, b, 2.0) + 1e-12) ++order;
  }
  return {brute <= kBruteTol && oned <= k1dTol && order == 0,
          fmt("brute force max diff %.3g, 1D vs exact %.3g, W1 > W2 cases %.0f", brute, oned, order)};
}

Outcome bound_sandwich() {
  // Forward flows from P_0 = N(0, 1) under v = -x and v_hat = -1.1 x.
  const double t = 1.0;
  const PointSampler p_s = [](double s, Engine& rng) { return (std::exp(-s) * standard_normal(rng, 1, 1).col(0)).eval(); };
  const auto lip = [](double) { return 1.1; };
  int violations = 0;
  double worst = -INFINITY;
  for (int rep = 0; rep < 20; ++rep) {
    const BoundEstimate b = w2_bound_rhs(linear(-1.1), linear(-1.0), p_s, lip, t, 10000, 100 + rep);
    Engine rng = make_engine(200 + rep, 0);
    const Eigen::MatrixXd x0 = standard_normal(rng, 1, 10000);
    const Eigen::MatrixXd x0b = standard_normal(rng, 1, 10000);
    const double w = w_p_1d(make_measure(std::exp(-t) * x0), make_measure(std::exp(-1.1 * t) * x0b), 2.0);
    worst = std::max(worst, w - (b.value + 3.0 * b.std_error));
    if (w > b.value + 3.0 * b.std_error) ++violations;
  }
  return {violations == 0, fmt("violations %.0f/20, max (W2 - bound - 3 SE) = %.3g", violations, worst)};
}

Outcome alekseev_grobner() {
  KnownFlows f;
  f.flow = [](const Eigen::VectorXd& x0, double s) { return (x0 * std::exp(-s)).eval(); };
  f.flow_hat = [](const Eigen::VectorXd& x0, double s) { return (x0 * std::exp(-1.1 * s)).eval(); };
  f.jacobian_hat = [](const Eigen::VectorXd& x, double s, double T) {
    return (Eigen::MatrixXd::Identity(x.size(), x.size()) * std::exp(-1.1 * (T - s))).eval();
  };
  const AlekseevGrobner ag = alekseev_grobner_check(linear(-1.1), linear(-1.0), f, v1(1.0), 1.0, 10000);
  return {ag.residual <= kAgTol, fmt("residual %.3g", ag.residual)};
}

Outcome conv_gap_check() {
  // P = Uniform[-1, 1]^d against the law of m Y + sigma eps, with (m, sigma)
  // from both schedules at five times.
  int violations = 0, config = 0;
  double worst = -INFINITY;
  const int n = 4096;
  for (int d : {1, 2})
    for (const Schedule& s : {Schedule::affine(), Schedule::variance_preserving()})
      for (double t : {0.05, 0.1, 0.2, 0.4, 0.8}) {
        const ScheduleValue sv = eval(s, t);
        Engine rng = make_engine(1000 + config, 0);
        Eigen::MatrixXd y(d, n), z(d, n);
        for (auto& v : y.reshaped()) v = 2 * uniform01(rng) - 1;
        for (auto& v : z.reshaped()) v = 2 * uniform01(rng) - 1;
        z = sv.m * z + sv.sigma * standard_normal(rng, d, n);
        Eigen::VectorXd costs(n);
        if (d == 1) {
          std::vector<double> a(y.data(), y.data() + n), b(z.data(), z.data() + n);
          std::sort(a.begin(), a.end());
          std::sort(b.begin(), b.end());
          for (int i = 0; i < n; ++i) costs(i) = (a[i] - b[i]) * (a[i] - b[i]);
        } else {
          costs = w_p_exact_transport(make_measure(y), make_measure(z), 2.0).pair_costs;
        }
        const double w = std::sqrt(costs.mean());
        const double se = matched_pair_bootstrap_se(costs, 2.0, 500, 7 + config);
        const double bound = conv_gap_bound(sv.m, sv.sigma, d / 3.0, d);
        worst = std::max(worst, w - bound - 3 * se);
        if (w > bound + 3 * se) ++violations;
        ++config;
      }
  return {violations == 0, fmt("violations %.0f/%.0f, max (W2 - bound - 3 SE) = %.3g", violations, config, worst)};
}

Outcome kde_equivalence() {
  const Eigen::MatrixXd y = uniform_atoms(21, 1, 30);
  const Schedule sched = Schedule::variance_preserving();
  const EmpiricalOracle o(y, sched);
  Engine rng = make_engine(22, 0);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const double t = 0.01 + 0.99 * uniform01(rng);
    const double x = 1.5 * standard_normal(rng, 1, 1)(0, 0);
    const ScheduleValue e = eval(sched, t);
    double kde = 0.0;
    for (int j = 0; j < y.cols(); ++j) {
      const double z = (x - e.m * y(0, j)) / e.sigma;
      kde += std::exp(-0.5 * z * z) / (std::sqrt(2 * std::numbers::pi) * e.sigma);
    }
    kde /= y.cols();
    worst = std::max(worst, std::abs(oracle_density(o, t, v1(x)) - kde) / std::max(1.0, kde));
  }

  const double T0 = 1e-2;
  FlowConfig flow = rk4(200, T0);
  flow.start_refinement = 40;
  const auto shared = std::make_shared<const EmpiricalOracle>(y, sched);
  const Eigen::MatrixXd gen = push_samples(as_field(shared), 1, 23, 10000, flow);
  const ScheduleValue e = eval(sched, T0);
  auto mix_cdf = [&](double x) {
    double c = 0.0;
    for (int j = 0; j < y.cols(); ++j) c += normal_cdf((x - e.m * y(0, j)) / e.sigma);
    return c / y.cols();
  };
  const double ks = stats::ks_statistic(std::vector<double>(gen.data(), gen.data() + gen.size()), mix_cdf);
  const double crit = stats::ks_critical_value(10000, kKsAlpha);
  return {worst <= kKdeTol && ks < crit, fmt("density max rel diff %.3g; KS %.4f vs critical %.4f", worst, ks, crit)};
}

Outcome spline_rate() {
  ScalarField f = [](const Eigen::VectorXd& x) { return std::sin(std::numbers::pi * x(0)); };
  const RateSweep sweep = rate_sweep(f, 4.0, 1, {16, 32, 64, 128});
  auto dict = level_dictionary(1, 3, 2);
  const SplineBasisIndex target = dict[dict.size() / 2];
  ScalarField g = [target](const Eigen::VectorXd& x) { return eval_tensor(target, x); };
  const double residual = l2_error(g, fit_dictionary(g, 1, dict), 1);
  return {sweep.slope <= kSplineSlope && residual <= kInSpanTol,
          fmt("sin(pi x) slope %.3f; in-span residual %.3g", sweep.slope, residual)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct RateRun {
  fs::path dir;
  bool ok = false;
  std::string error;
};

RateRun run_rate_config(const std::string& config, const fs::path& dir, int parallel) {
  RateRun r{dir};
  try {
    ExperimentConfig cfg = load_config(config);
    cfg.output_dir = dir.string();
    cfg.parallel = parallel;
    fs::remove_all(dir);
    std::ofstream log(dir.string() + ".log");
    const RunSummary s = run_experiment(cfg, &log);
    r.ok = s.failures * 5 <= s.cells.size();
    if (!r.ok) r.error = std::to_string(s.failures) + " failed cells";
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

Outcome rate_trend(const RateRun& run) {
  if (!run.ok) return {false, "run failed: " + run.error};
  const auto report = nlohmann::json::parse(slurp(run.dir / "report.json"));
  const double s = report["theory"]["s"], delta = report["theory"]["delta"];
  const int d = report["theory"]["d"];
  double slope_half = NAN, slope_one = NAN;
  int worst_inv = 0;
  std::ostringstream detail;
  for (const auto& row : report["slopes"]) {
    if (row["p"].get<double>() != 1.0) continue;
    const double kappa = row["kappa"];
    worst_inv = std::max(worst_inv, row["inversions"].get<int>());
    const double slope = row["slope"].is_number() ? row["slope"].get<double>() : NAN;
    if (kappa == 0.5) slope_half = slope;
    if (kappa == 1.0) slope_one = slope;
    detail << row["schedule"].get<std::string>() << " slope " << fmt("%.3f", slope) << " ("
           << row["inversions"].get<int>() << " inversions); ";
  }
  const double exponent = upper_rate_exponent(s, d, 0.5, delta);
  const bool a = worst_inv <= kMaxInversions;
  const bool b = slope_half <= slope_one - kSlopeGap;
  const bool c = std::abs(slope_half + exponent) <= kSlopeTol;
  detail << fmt("theory exponent (kappa=1/2) %.3f; ", exponent) << "(a) " << (a ? "ok" : "no") << " (b) "
         << (b ? "ok" : "no") << " (c) " << (c ? "ok" : "no");
  const std::string text = detail.str();
  return {a && b && c, text};
}

Outcome determinism(const RateRun& one, const RateRun& eight) {
  if (!one.ok || !eight.ok) return {false, "run failed: " + one.error + eight.error};
  const std::string a = slurp(one.dir / "results.csv"), b = slurp(eight.dir / "results.csv");
  const bool same = !a.empty() && a == b;
  return {same, fmt("results.csv %.0f bytes, parallel 1 vs 8 identical: ", static_cast<double>(a.size())) +
                    (same ? "yes" : "no")};
}

int report(int id, double budget_s, const std::function<Outcome()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = secs <= budget_s;
  const bool pass = o.pass && in_time;
  std::printf("criterion %2d: %s  %s [%.1f s, budget %.0f s%s]\n", id, pass ? "PASS" : "FAIL", o.detail.c_str(),
              secs, budget_s, in_time ? "" : ", over budget");
  std::fflush(stdout);
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string which = argc > 1 ? argv[1] : "all";
  const std::string config = argc > 2 ? argv[2] : std::string(FMLAB_SOURCE_DIR) + "/configs/rate_trend_1d.ini";
  const fs::path work = argc > 3 ? fs::path(argv[3]) : fs::temp_directory_path() / "fmlab_acceptance";
  int failures = 0;
  if (which == "fast" || which == "all") {
    failures += report(1, 1, exponent_identities);
    failures += report(2, 5, gradient_check);
    failures += report(3, 5, closed_form_flow);
    failures += report(4, 30, continuity_residual);
    failures += report(5, 60, wasserstein_exactness);
    failures += report(6, 60, bound_sandwich);
    failures += report(7, 5, alekseev_grobner);
    failures += report(8, 120, conv_gap_check);
    failures += report(9, 120, kde_equivalence);
    failures += report(10, 30, spline_rate);
  }
  if (which == "long" || which == "all") {
    RateRun one, eight;
    failures += report(11, 30 * 60, [&] {
      one = run_rate_config(config, work / "parallel1", 1);
      return rate_trend(one);
    });
    // Criterion 12 reruns the grid; its budget is criterion 11's.
    failures += report(12, 30 * 60, [&] {
      eight = run_rate_config(config, work / "parallel8", 8);
      return determinism(one, eight);
    });
  }
  return failures;
}
