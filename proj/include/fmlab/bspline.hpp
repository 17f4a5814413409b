#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fmlab {

// Cardinal B-spline N_l: the (l + 1)-fold convolution of the indicator of
// [0, 1]. Piecewise polynomial of degree l supported on [0, l + 1].
double eval_cardinal(int order, double x);

// Tensor basis M^d_{k,j}(x) = prod_i N_l(2^{k_i} x_i - j_i).
struct SplineBasisIndex {
  int order = 3;
  std::vector<int> level;  // k
  std::vector<int> shift;  // j

  int dim() const { return static_cast<int>(level.size()); }
  // Support box [2^{-k_i} j_i, 2^{-k_i} (j_i + l + 1)].
  double support_lo(int i) const;
  double support_hi(int i) const;
  // Integral of the basis over R^d: prod_i 2^{-k_i}.
  double mass() const;
};

double eval_tensor(const SplineBasisIndex& idx, const Eigen::Ref<const Eigen::VectorXd>& x);

struct SplineApproximant {
  std::vector<SplineBasisIndex> basis;
  Eigen::VectorXd coefficients;
  int count() const { return static_cast<int>(basis.size()); }
  double condition_estimate = 1.0;
  bool rank_warning = false;
};

double evaluate(const SplineApproximant& approx, const Eigen::Ref<const Eigen::VectorXd>& x);

// Every basis function of level k (all axes) whose support meets (-1, 1)^d.
std::vector<SplineBasisIndex> level_dictionary(int dim, int order, int level);

// How the basis budget N is spread over dyadic levels.
struct LevelAllocation {
  enum class Policy {
    SingleFine,  // one level: the finest whose full dictionary fits in N
    Multilevel,  // full levels 0..K, then n_k ~ N 2^{-nu (k - K)} greedy picks above K
  };
  Policy policy = Policy::SingleFine;
  double nu = 1.0;
  int extra_levels = 2;
};

using ScalarField = std::function<double(const Eigen::VectorXd&)>;

// Least-squares fit on [-1, 1]^d (d <= 2) against a knot-aligned Gauss-Legendre
// grid. Sets rank_warning when the design is ill-conditioned (> 1e12).
SplineApproximant fit(const ScalarField& f, int dim, int budget, int order = 3,
                      const LevelAllocation& levels = {});

// Same, over an explicit dictionary.
SplineApproximant fit_dictionary(const ScalarField& f, int dim,
                                 std::vector<SplineBasisIndex> dictionary);

// L2([-1,1]^d) distance between f and the approximant (fine quadrature).
double l2_error(const ScalarField& f, const SplineApproximant& approx, int dim);

enum class SmoothedKind { Density, WhitenedMoment, MeanMoment };

// Integral of M(y) N(x; m y, sigma^2 I) times 1, (x - m y)/sigma, or y over R^d.
// Density returns a 1-vector; the moment kinds return d-vectors. Throws
// NumericalError carrying the achieved estimate if abs_tol is not reached.
Eigen::VectorXd smoothed_basis_integral(const SplineBasisIndex& idx, SmoothedKind kind, double m,
                                        double sigma, const Eigen::Ref<const Eigen::VectorXd>& x,
                                        double abs_tol = 1e-10);

struct RateRow {
  int budget;
  int basis_count;
  double l2_error;
};

struct RateSweep {
  std::vector<RateRow> rows;
  double slope = 0.0;     // least squares on (log basis_count, log error)
  double s_label = 0.0;
  double expected_slope = 0.0;  // -s/d
  bool floor = false;           // errors at the quadrature floor
};

RateSweep rate_sweep(const ScalarField& f, double s_label, int dim, const std::vector<int>& budgets,
                     int order = 3, const LevelAllocation& levels = {});

void write_rate_csv(const RateSweep& sweep, const std::string& path);

}  // namespace fmlab
