#include "fmlab/ode_flow.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <thread>

#include "fmlab/error.hpp"
#include "fmlab/quadrature.hpp"

namespace fmlab {

void check_config(const FlowConfig& cfg) {
  if (!(cfg.t_start > 0.0) || !(cfg.t_end > 0.0) || cfg.t_start > 1.0 || cfg.t_end > 1.0)
    throw ParameterError("flow config: endpoints must lie in (0, 1]");
  if (cfg.t_start == cfg.t_end) throw ParameterError("flow config: empty time interval");
  if (cfg.start_refinement < 0 || cfg.start_refinement > 60)
    throw ParameterError("flow config: start_refinement must lie in [0, 60]");
  if (cfg.method != StepMethod::AdaptiveRK45 && cfg.steps < 1)
    throw ParameterError("flow config: steps must be >= 1");
  if (cfg.method == StepMethod::AdaptiveRK45 && !(cfg.tol > 0.0 && cfg.tol <= 1e-2))
    throw ParameterError("flow config: adaptive tolerance must lie in (0, 1e-2]");
}

namespace {

// Breakpoints strictly inside the integration interval, ordered along the flow.
std::vector<double> segment_ends(const FlowConfig& cfg) {
  const double lo = std::min(cfg.t_start, cfg.t_end), hi = std::max(cfg.t_start, cfg.t_end);
  std::vector<double> ends;
  for (double b : cfg.breakpoints)
    if (b > lo && b < hi) ends.push_back(b);
  std::sort(ends.begin(), ends.end());
  ends.erase(std::unique(ends.begin(), ends.end()), ends.end());
  if (cfg.t_start > cfg.t_end) std::reverse(ends.begin(), ends.end());
  ends.push_back(cfg.t_end);
  return ends;
}

[[noreturn]] void non_finite(Eigen::Index column, double t, const Eigen::VectorXd& state) {
  std::ostringstream msg;
  msg << "flow: non-finite state in trajectory " << column << " at t = " << t << ", state =";
  for (Eigen::Index i = 0; i < state.size(); ++i) msg << ' ' << state(i);
  throw NumericalError(msg.str());
}

void check_finite(const Eigen::MatrixXd& x, double t, Eigen::Index offset = 0) {
  if (x.allFinite()) return;
  for (Eigen::Index c = 0; c < x.cols(); ++c)
    if (!x.col(c).allFinite()) non_finite(offset + c, t, x.col(c));
}

Eigen::MatrixXd step(const VelocityField& f, const Eigen::MatrixXd& x, double t, double h,
                     StepMethod method) {
  const Eigen::Index n = x.cols();
  auto at = [n](double s) { return Eigen::VectorXd::Constant(n, s); };
  const Eigen::MatrixXd k1 = f(x, at(t));
  if (method == StepMethod::Euler) return x + h * k1;
  const Eigen::MatrixXd k2 = f(x + 0.5 * h * k1, at(t + 0.5 * h));
  const Eigen::MatrixXd k3 = f(x + 0.5 * h * k2, at(t + 0.5 * h));
  const Eigen::MatrixXd k4 = f(x + h * k3, at(t + h));
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Dormand-Prince 5(4) for one trajectory.
Eigen::VectorXd adaptive(const VelocityField& f, Eigen::VectorXd x, const FlowConfig& cfg,
                         Eigen::Index column) {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                          b6 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  const Eigen::Index d = x.size();
  auto eval1 = [&](const Eigen::VectorXd& y, double s) -> Eigen::VectorXd {
    return f(y, Eigen::VectorXd::Constant(1, s)).col(0);
  };
  (void)d;
  double t = cfg.t_start;
  double h = (cfg.t_end - cfg.t_start) / 100.0;
  Eigen::VectorXd k1 = eval1(x, t);
  for (double end : segment_ends(cfg)) {
    const double dir = end < t ? -1.0 : 1.0;
    h = dir * std::abs(h);
    int guard = 0;
    while (dir * (end - t) > 0.0) {
      if (++guard > 1000000) throw NumericalError("flow: adaptive step budget exhausted");
      if (dir * (t + h - end) > 0.0) h = end - t;
      const Eigen::VectorXd k2 = eval1(x + h * (a21 * k1), t + c2 * h);
      const Eigen::VectorXd k3 = eval1(x + h * (a31 * k1 + a32 * k2), t + c3 * h);
      const Eigen::VectorXd k4 = eval1(x + h * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * h);
      const Eigen::VectorXd k5 =
          eval1(x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * h);
      const Eigen::VectorXd k6 =
          eval1(x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5), t + h);
      const Eigen::VectorXd y = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const Eigen::VectorXd k7 = eval1(y, t + h);
      const Eigen::VectorXd err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      double ratio = 0.0;
      for (Eigen::Index i = 0; i < err.size(); ++i) {
        const double scale = cfg.tol * (1.0 + std::max(std::abs(x(i)), std::abs(y(i))));
        ratio = std::max(ratio, std::abs(err(i)) / scale);
      }
      if (!std::isfinite(ratio)) non_finite(column, t + h, y);
      if (ratio <= 1.0) {
        t = (dir * (t + h - end) >= 0.0) ? end : t + h;
        x = y;
        k1 = k7;
      }
      const double factor = ratio == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(ratio, -0.2), 0.2, 5.0);
      h *= factor;
      if (ratio > 1.0 && std::abs(h) < 1e-15 * std::max(1.0, std::abs(t)))
        throw NumericalError("flow: adaptive step size underflow in trajectory " +
                             std::to_string(column) + " at t = " + std::to_string(t));
    }
    k1 = eval1(x, t);
  }
  return x;
}

}  // namespace

std::vector<double> time_grid(const FlowConfig& cfg) {
  check_config(cfg);
  std::vector<double> grid;
  const double a = cfg.t_start, b = cfg.t_end;
  grid.reserve(cfg.steps + 1);
  for (int i = 0; i <= cfg.steps; ++i) {
    const double u = static_cast<double>(i) / cfg.steps;
    if (i == cfg.steps) {
      grid.push_back(b);
    } else if (cfg.spacing == StepSpacing::Logarithmic) {
      grid.push_back(std::exp(std::log(a) + u * (std::log(b) - std::log(a))));
    } else {
      grid.push_back(a + u * (b - a));
    }
  }
  grid.front() = a;
  if (cfg.start_refinement > 0 && grid.size() > 1) {
    const double first = grid[1];
    std::vector<double> extra;
    for (int k = cfg.start_refinement; k >= 1; --k) extra.push_back(a + std::ldexp(first - a, -k));
    grid.insert(grid.begin() + 1, extra.begin(), extra.end());
  }
  std::vector<double> ends = segment_ends(cfg);
  ends.pop_back();
  if (!ends.empty()) {
    grid.insert(grid.end(), ends.begin(), ends.end());
    if (a > b)
      std::sort(grid.begin(), grid.end(), std::greater<>());
    else
      std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  }
  return grid;
}

Eigen::MatrixXd integrate(const VelocityField& field, const Eigen::MatrixXd& x, const FlowConfig& cfg) {
  check_config(cfg);
  if (cfg.method == StepMethod::AdaptiveRK45) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) out.col(c) = adaptive(field, x.col(c), cfg, c);
    return out;
  }
  const std::vector<double> grid = time_grid(cfg);
  Eigen::MatrixXd state = x;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    state = step(field, state, grid[i], grid[i + 1] - grid[i], cfg.method);
    check_finite(state, grid[i + 1]);
  }
  return state;
}

Eigen::VectorXd integrate(const VelocityField& field, const Eigen::VectorXd& x1, const FlowConfig& cfg) {
  return integrate(field, Eigen::MatrixXd(x1), cfg).col(0);
}

Trajectory integrate_trajectory(const VelocityField& field, const Eigen::VectorXd& x1,
                                const FlowConfig& cfg) {
  if (cfg.method == StepMethod::AdaptiveRK45)
    throw ParameterError("integrate_trajectory: fixed-step methods only");
  Trajectory traj;
  traj.t = time_grid(cfg);
  Eigen::MatrixXd state = x1;
  traj.x.push_back(x1);
  for (std::size_t i = 0; i + 1 < traj.t.size(); ++i) {
    state = step(field, state, traj.t[i], traj.t[i + 1] - traj.t[i], cfg.method);
    check_finite(state, traj.t[i + 1]);
    traj.x.push_back(state.col(0));
  }
  return traj;
}

Eigen::MatrixXd push_samples(const VelocityField& field, int dim, std::uint64_t seed,
                             Eigen::Index n_gen, const FlowConfig& cfg, int parallel) {
  if (n_gen < 1) throw ParameterError("push_samples: n_gen must be >= 1");
  if (dim < 1) throw ParameterError("push_samples: dim must be >= 1");
  check_config(cfg);
  constexpr Eigen::Index kBlock = 256;
  Eigen::MatrixXd out(dim, n_gen);
  const Eigen::Index blocks = (n_gen + kBlock - 1) / kBlock;
  std::atomic<Eigen::Index> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(blocks));

  auto worker = [&] {
    for (Eigen::Index b = next++; b < blocks; b = next++) {
      const Eigen::Index begin = b * kBlock, count = std::min(kBlock, n_gen - begin);
      try {
        Eigen::MatrixXd x(dim, count);
        for (Eigen::Index c = 0; c < count; ++c) {
          Engine rng = make_engine(seed, static_cast<std::uint64_t>(begin + c));
          x.col(c) = standard_normal(rng, dim, 1);
        }
        try {
          out.middleCols(begin, count) = integrate(field, x, cfg);
        } catch (const NumericalError& e) {
          throw NumericalError(std::string(e.what()) + " (block starting at sample " +
                               std::to_string(begin) + ")");
        }
      } catch (...) {
        errors[static_cast<std::size_t>(b)] = std::current_exception();
      }
    }
  };
  const int threads = std::clamp<int>(parallel, 1, static_cast<int>(blocks));
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

void write_samples_csv(std::ostream& out, const Eigen::MatrixXd& samples, double t_end,
                       const std::string& field_id, std::uint64_t seed) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", t_end);
  out << "# t_end=" << buf << ",field=" << field_id << ",seed=" << seed << '\n';
  for (Eigen::Index r = 0; r < samples.rows(); ++r) out << (r ? "," : "") << 'x' << r;
  out << '\n';
  for (Eigen::Index c = 0; c < samples.cols(); ++c) {
    for (Eigen::Index r = 0; r < samples.rows(); ++r) {
      std::snprintf(buf, sizeof buf, "%.17g", samples(r, c));
      out << (r ? "," : "") << buf;
    }
    out << '\n';
  }
}

BoundEstimate w2_bound_rhs(const VelocityField& v_hat, const VelocityField& v_true,
                           const PointSampler& sampler, const std::function<double(double)>& lip,
                           double t, int mc, std::uint64_t seed, BoundExponent variant) {
  if (mc < 1) throw ParameterError("w2_bound_rhs: mc must be >= 1");
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("w2_bound_rhs: t must lie in [0, 1]");
  BoundEstimate est;
  if (t == 0.0) return est;
  Engine rng = make_engine(seed, 0xb0d);
  std::vector<double> q(static_cast<std::size_t>(mc));
  auto rate = [&](double u) { return variant == BoundExponent::Proof ? lip(u) : std::exp(lip(u)); };
  for (int i = 0; i < mc; ++i) {
    const double s = t * (i + uniform01(rng)) / mc;
    const Eigen::VectorXd x = sampler(s, rng);
    const AdaptiveResult integral = integrate_adaptive(rate, s, t, 1e-10);
    if (!std::isfinite(integral.value) || integral.value > 700.0)
      throw NumericalError("w2_bound_rhs: exponent integral " + std::to_string(integral.value) +
                           " exceeds 700, bound is vacuous");
    est.max_log_weight = std::max(est.max_log_weight, 2.0 * integral.value);
    const Eigen::VectorXd ts = Eigen::VectorXd::Constant(1, s);
    const double diff = (v_hat(x, ts) - v_true(x, ts)).squaredNorm();
    q[static_cast<std::size_t>(i)] = std::exp(2.0 * integral.value) * diff;
  }
  double mean = 0.0;
  for (double v : q) mean += v;
  mean /= mc;
  double var = 0.0;
  for (double v : q) var += (v - mean) * (v - mean);
  var = mc > 1 ? var / (mc - 1) : 0.0;
  est.value = t * std::sqrt(mean);
  const double se_mean = std::sqrt(var / mc);
  est.std_error = mean > 0.0 ? t * se_mean / (2.0 * std::sqrt(mean)) : 0.0;
  return est;
}

AlekseevGrobner alekseev_grobner_check(const VelocityField& v_hat, const VelocityField& v_true,
                                       const KnownFlows& flows, const Eigen::VectorXd& x0, double T,
                                       int quad_steps) {
  if (quad_steps < 2) throw ParameterError("alekseev_grobner_check: quad_steps must be >= 2");
  const int n = quad_steps + (quad_steps % 2);
  AlekseevGrobner out;
  out.lhs = flows.flow_hat(x0, T) - flows.flow(x0, T);
  out.rhs = Eigen::VectorXd::Zero(x0.size());
  const double h = T / n;
  for (int i = 0; i <= n; ++i) {
    const double s = i * h;
    const Eigen::VectorXd y = flows.flow(x0, s);
    const Eigen::VectorXd ts = Eigen::VectorXd::Constant(1, s);
    const Eigen::VectorXd diff = v_hat(y, ts).col(0) - v_true(y, ts).col(0);
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    out.rhs += w * (flows.jacobian_hat(y, s, T) * diff);
  }
  out.rhs *= h / 3.0;
  out.residual = (out.lhs - out.rhs).norm();
  return out;
}

}  // namespace fmlab
