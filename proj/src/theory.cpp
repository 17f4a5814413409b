#include "fmlab/theory.hpp"

#include <algorithm>
#include <cmath>

#include "fmlab/error.hpp"
#include "fmlab/wasserstein.hpp"

namespace fmlab {

void check_context(const RateContext& ctx) {
  if (!(ctx.s > 0.0)) throw ParameterError("rate context: s must be positive");
  if (ctx.d < 1) throw ParameterError("rate context: d must be >= 1");
  if (!(ctx.kappa >= 0.5)) throw ParameterError("rate context: kappa must be >= 1/2");
  if (!(ctx.delta >= 0.0) || !(ctx.delta < 1.0 / ctx.kappa))
    throw ParameterError("rate context: delta must lie in [0, 1/kappa)");
}

double upper_rate_exponent(const RateContext& ctx) {
  check_context(ctx);
  return (ctx.s + 1.0 / (2.0 * ctx.kappa) - ctx.delta) / (2.0 * ctx.s + ctx.d);
}

double upper_rate_exponent(double s, int d, double kappa, double delta) {
  return upper_rate_exponent(RateContext{s, d, kappa, delta, 2});
}

double minimax_lower_exponent(double s, int d) {
  if (d < 2) throw DomainError("minimax lower bound requires d >= 2");
  if (!(s > 0.0)) throw ParameterError("minimax lower bound: s must be positive");
  return (s + 1.0) / (2.0 * s + d);
}

double kde_exponent(int d) {
  if (d < 1) throw ParameterError("kde_exponent: d must be >= 1");
  return 4.0 / (4.0 + d);
}

std::uint64_t n_to_N(std::uint64_t n, double s, int d) {
  if (n < 2) throw ParameterError("n_to_N: n must be >= 2");
  if (!(s > 0.0) || d < 1) throw ParameterError("n_to_N: need s > 0 and d >= 1");
  return static_cast<std::uint64_t>(std::llround(std::pow(static_cast<double>(n), d / (2.0 * s + d))));
}

double covering_log_bound(double S, double L, double w_max, double B, double eps, double n) {
  if (!(S > 0 && L > 0 && w_max > 0 && B > 0 && eps > 0 && n > 0) || !(eps < 1.0))
    throw ParameterError("covering_log_bound: arguments must be positive with eps < 1");
  return S * L * std::log(w_max * B * n / eps);
}

double theta_n(const Schedule& schedule, double T0, double V, int d) {
  if (!(T0 > 0.0 && T0 < 1.0)) throw DomainError("theta_n: T0 must lie in (0, 1)");
  const ScheduleValue sv = eval(schedule, T0);
  return conv_gap_bound(sv.m, sv.sigma, V, d);
}

double r0_minimum(double s, double kappa, double kappatilde) {
  if (!(s > 0.0) || !(kappa > 0.0) || !(kappatilde > 0.0))
    throw ParameterError("r0_minimum: arguments must be positive");
  return (s + 1.0) / std::min(kappa, kappatilde);
}

}  // namespace fmlab
