#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fmlab {

// Ground-truth densities on [-1, 1]^d with constant boundary collars.
//
//   Uniform           2^{-d} on the cube.
//   SplineMixture     Z^{-1} (1 + sum_I alpha_I prod_i B_{I_i}(x_i)), cubic cardinal
//                     B-splines on a uniform grid inside the collar; coefficients
//                     are the alpha_I in row-major multi-index order.
//   PerturbedUniform  Z^{-1} (1 + sum_k a_k prod_i beta((x_i - c_ki) / w)) with the
//                     C^2 bump beta(u) = (1 - u^2)^3 on |u| < 1; coefficients are
//                     [w, a_1, c_1..., a_2, c_2..., ...].
enum class TargetKind { Uniform, SplineMixture, PerturbedUniform };

struct TargetTables;

struct TargetDensity {
  int dim = 1;
  TargetKind kind = TargetKind::Uniform;
  std::vector<double> coefficients;
  double smoothness = 1.0;  // declared index s, not a certified norm
  double c0 = 1.0;          // c0^{-1} <= p <= c0 on the cube

  double normalizer = 1.0;  // Z
  double pmax = 1.0;        // rejection envelope
  std::shared_ptr<const TargetTables> tables;
};

constexpr double kTargetCollar = 0.1;

TargetDensity make_uniform(int dim);
TargetDensity make_spline_mixture(int dim, std::vector<double> coefficients,
                                  double smoothness = 2.0);
// alpha_I ~ amplitude * U(-0.5, 1), bases_per_dim per axis.
TargetDensity make_spline_mixture_random(int dim, int bases_per_dim, std::uint64_t generator_seed,
                                         double amplitude = 1.0, double smoothness = 2.0);
TargetDensity make_perturbed_uniform(int dim, std::vector<double> coefficients,
                                     double smoothness = 2.0);
TargetDensity make_perturbed_uniform_random(int dim, int bumps, std::uint64_t generator_seed,
                                            double smoothness = 2.0);

double pdf(const TargetDensity& target, const Eigen::Ref<const Eigen::VectorXd>& x);

// n i.i.d. points as a dim x n matrix; deterministic in (seed, n).
// Inverse CDF in 1D, rejection from the uniform proposal otherwise.
Eigen::MatrixXd sample(const TargetDensity& target, std::uint64_t seed, Eigen::Index n);

// CDF of a 1D target.
double cdf(const TargetDensity& target, double x);
// CDF of coordinate `axis` (d <= 2).
double marginal_cdf(const TargetDensity& target, int axis, double x);

// E ||Y||^2 by quadrature (d <= 2) or 2^20-point Monte Carlo otherwise.
double second_moment(const TargetDensity& target);

std::string kind_name(TargetKind kind);
TargetKind parse_kind(const std::string& name);
std::string target_id(const TargetDensity& target);

}  // namespace fmlab
