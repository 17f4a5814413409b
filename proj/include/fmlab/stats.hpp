#pragma once

#include <functional>
#include <span>
#include <vector>

namespace fmlab::stats {

// One-sample Kolmogorov-Smirnov statistic sup|F_n - F|.
double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf);

// Two-sample statistic sup|F_a - F_b|.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

// Asymptotic critical value c(alpha) * sqrt(1/n) (one sample) with
// c(alpha) = sqrt(-log(alpha / 2) / 2).
double ks_critical_value(std::size_t n, double alpha);
double ks_two_sample_critical_value(std::size_t n, std::size_t m, double alpha);

// Upper-tail chi-square quantile with `dof` degrees of freedom.
double chi_square_critical_value(double dof, double alpha);

double mean(std::span<const double> v);
double sample_stddev(std::span<const double> v);

}  // namespace fmlab::stats
