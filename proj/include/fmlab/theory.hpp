#pragma once

#include <cstdint>

#include "fmlab/schedules.hpp"

namespace fmlab {

// Exponents are reported without poly-log factors; comparisons with fitted
// slopes hold only up to poly(log n).
struct RateContext {
  double s = 1.0;
  int d = 1;
  double kappa = 0.5;
  double delta = 0.0;
  std::uint64_t n = 2;
};

// Throws ParameterError unless s > 0, d >= 1, kappa >= 1/2, 0 <= delta < 1/kappa.
void check_context(const RateContext& ctx);

// (s + 1/(2 kappa) - delta) / (2s + d)
double upper_rate_exponent(const RateContext& ctx);
double upper_rate_exponent(double s, int d, double kappa, double delta);

// (s + 1) / (2s + d); DomainError for d < 2.
double minimax_lower_exponent(double s, int d);

// 4 / (4 + d)
double kde_exponent(int d);

// round(n^{d / (2s + d)})
std::uint64_t n_to_N(std::uint64_t n, double s, int d);

// S L log(eps^{-1} Wmax B n)
double covering_log_bound(double S, double L, double w_max, double B, double eps, double n);

// Gap between P and its smoothed version at the stopping time:
// conv_gap_bound(m_T0, sigma_T0, V, d).
double theta_n(const Schedule& schedule, double T0, double V, int d);

// Smallest admissible R0 = (s + 1) / min(kappa, kappatilde).
double r0_minimum(double s, double kappa, double kappatilde);

}  // namespace fmlab
