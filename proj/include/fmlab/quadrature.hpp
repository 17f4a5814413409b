#pragma once

#include <functional>
#include <span>

#include <Eigen/Dense>

namespace fmlab {

struct QuadratureRule {
  Eigen::VectorXd nodes;    // on [-1, 1]
  Eigen::VectorXd weights;
};

// n-point Gauss-Legendre rule (Golub-Welsch). Exact for polynomials of
// degree <= 2n - 1.
const QuadratureRule& gauss_legendre(int n);

// Composite Gauss-Legendre over `panels` equal panels of [a, b].
double integrate_panels(const std::function<double(double)>& f, double a, double b,
                        int panels, int order = 8);

// Composite rule over the panels delimited by the sorted `breaks`.
double integrate_breaks(const std::function<double(double)>& f, std::span<const double> breaks,
                        int order = 8);

struct AdaptiveResult {
  double value = 0.0;
  double error = 0.0;
  bool converged = false;
};

// Adaptive Gauss-Kronrod (15-point) integration with absolute tolerance.
AdaptiveResult integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                                  double abs_tol, unsigned max_depth = 30);

}  // namespace fmlab
