#include "fmlab/bspline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fmlab/error.hpp"
#include "fmlab/quadrature.hpp"

namespace fmlab {

double eval_cardinal(int order, double x) {
  if (order < 0) throw ParameterError("eval_cardinal: order must be >= 0");
  if (x < 0.0 || x >= order + 1) return 0.0;
  if (order == 0) return 1.0;
  // Cox-de Boor on integer knots.
  return (x * eval_cardinal(order - 1, x) + (order + 1 - x) * eval_cardinal(order - 1, x - 1.0)) /
         order;
}

double SplineBasisIndex::support_lo(int i) const { return std::ldexp(shift[i], -level[i]); }
double SplineBasisIndex::support_hi(int i) const {
  return std::ldexp(shift[i] + order + 1, -level[i]);
}
double SplineBasisIndex::mass() const {
  double m = 1.0;
  for (int k : level) m = std::ldexp(m, -k);
  return m;
}

double eval_tensor(const SplineBasisIndex& idx, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != idx.dim()) throw DomainError("eval_tensor: dimension mismatch");
  double v = 1.0;
  for (int i = 0; i < idx.dim() && v != 0.0; ++i)
    v *= eval_cardinal(idx.order, std::ldexp(x(i), idx.level[i]) - idx.shift[i]);
  return v;
}

double evaluate(const SplineApproximant& approx, const Eigen::Ref<const Eigen::VectorXd>& x) {
  double s = 0.0;
  for (int b = 0; b < approx.count(); ++b) s += approx.coefficients(b) * eval_tensor(approx.basis[b], x);
  return s;
}

std::vector<SplineBasisIndex> level_dictionary(int dim, int order, int level) {
  const int lo = -(1 << level) - order;
  const int hi = (1 << level) - 1;
  const int per_axis = hi - lo + 1;
  std::vector<SplineBasisIndex> out;
  std::vector<int> pos(dim, 0);
  while (true) {
    SplineBasisIndex idx;
    idx.order = order;
    idx.level.assign(dim, level);
    idx.shift.resize(dim);
    for (int i = 0; i < dim; ++i) idx.shift[i] = lo + pos[i];
    out.push_back(std::move(idx));
    int i = dim - 1;
    while (i >= 0 && ++pos[i] == per_axis) pos[i--] = 0;
    if (i < 0) break;
  }
  return out;
}

namespace {

struct Grid {
  Eigen::MatrixXd points;  // dim x q
  Eigen::VectorXd weights;
};

// Tensor Gauss-Legendre grid on [-1, 1]^d with panels aligned to the knots of
// `level` (spacing 2^{-level}), each split into `sub` pieces.
Grid aligned_grid(int dim, int level, int sub, int order) {
  const QuadratureRule& rule = gauss_legendre(order);
  const int panels = (1 << (level + 1)) * sub;
  const double h = 2.0 / panels;
  std::vector<double> nodes, weights;
  for (int p = 0; p < panels; ++p)
    for (int k = 0; k < order; ++k) {
      nodes.push_back(-1.0 + h * (p + 0.5 * (rule.nodes(k) + 1.0)));
      weights.push_back(0.5 * h * rule.weights(k));
    }
  const Eigen::Index per = static_cast<Eigen::Index>(nodes.size());
  Eigen::Index total = 1;
  for (int i = 0; i < dim; ++i) total *= per;
  Grid g{Eigen::MatrixXd(dim, total), Eigen::VectorXd(total)};
  std::vector<Eigen::Index> pos(dim, 0);
  for (Eigen::Index q = 0; q < total; ++q) {
    double w = 1.0;
    for (int i = 0; i < dim; ++i) {
      g.points(i, q) = nodes[pos[i]];
      w *= weights[pos[i]];
    }
    g.weights(q) = w;
    int i = dim - 1;
    while (i >= 0 && ++pos[i] == per) pos[i--] = 0;
  }
  return g;
}

int finest_level(const std::vector<SplineBasisIndex>& dict) {
  int k = 0;
  for (const auto& b : dict)
    for (int l : b.level) k = std::max(k, l);
  return k;
}

Eigen::MatrixXd design(const std::vector<SplineBasisIndex>& dict, const Grid& g) {
  Eigen::MatrixXd a(g.points.cols(), static_cast<Eigen::Index>(dict.size()));
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    for (Eigen::Index q = 0; q < a.rows(); ++q) a(q, c) = eval_tensor(dict[c], g.points.col(q));
  return a;
}

Eigen::VectorXd sample_field(const ScalarField& f, const Grid& g) {
  Eigen::VectorXd y(g.points.cols());
  for (Eigen::Index q = 0; q < y.size(); ++q) y(q) = f(g.points.col(q));
  return y;
}

int dictionary_size(int dim, int order, int level) {
  return static_cast<int>(std::pow((1 << (level + 1)) + order, dim) + 0.5);
}

}  // namespace

SplineApproximant fit_dictionary(const ScalarField& f, int dim,
                                 std::vector<SplineBasisIndex> dictionary) {
  if (dim < 1 || dim > 2) throw ParameterError("fit: only d <= 2 is supported");
  if (dictionary.empty()) throw ParameterError("fit: empty dictionary");
  const int level = finest_level(dictionary);
  const Grid g = aligned_grid(dim, level, dim == 1 ? 2 : 1, std::max(6, dictionary[0].order + 3));
  const Eigen::VectorXd sw = g.weights.cwiseSqrt();
  const Eigen::MatrixXd a = sw.asDiagonal() * design(dictionary, g);
  const Eigen::VectorXd y = sw.asDiagonal() * sample_field(f, g);

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod;
  cod.setThreshold(1e-13);
  cod.compute(a);
  SplineApproximant out;
  out.basis = std::move(dictionary);
  out.coefficients = cod.solve(y);
  const auto& r = cod.matrixQTZ();
  const Eigen::Index n = std::min(r.rows(), r.cols());
  const double rmax = std::abs(r(0, 0));
  double rmin = std::abs(r(n - 1, n - 1));
  out.condition_estimate = rmin > 0.0 ? rmax / rmin : INFINITY;
  out.rank_warning = cod.rank() < a.cols() || out.condition_estimate > 1e12;
  return out;
}

SplineApproximant fit(const ScalarField& f, int dim, int budget, int order,
                      const LevelAllocation& levels) {
  if (budget < 1) throw ParameterError("fit: budget must be >= 1");
  if (levels.policy == LevelAllocation::Policy::SingleFine) {
    int k = 0;
    while (dictionary_size(dim, order, k + 1) <= budget) ++k;
    return fit_dictionary(f, dim, level_dictionary(dim, order, k));
  }

  // Multilevel: full coarse levels with half the budget, greedy finer picks.
  std::vector<SplineBasisIndex> dict;
  int used = 0, top = 0;
  for (int k = 0;; ++k) {
    const int size = dictionary_size(dim, order, k);
    if (k > 0 && used + size > budget / 2) break;
    auto level = level_dictionary(dim, order, k);
    dict.insert(dict.end(), level.begin(), level.end());
    used += size;
    top = k;
  }
  const int remaining = budget - used;
  if (remaining <= 0 || levels.extra_levels <= 0) return fit_dictionary(f, dim, std::move(dict));

  double weight_sum = 0.0;
  for (int e = 1; e <= levels.extra_levels; ++e) weight_sum += std::pow(2.0, -levels.nu * e);

  SplineApproximant coarse = fit_dictionary(f, dim, dict);
  const Grid g = aligned_grid(dim, top + levels.extra_levels, 1, std::max(6, order + 3));
  Eigen::VectorXd residual(g.points.cols());
  for (Eigen::Index q = 0; q < residual.size(); ++q)
    residual(q) = f(g.points.col(q)) - evaluate(coarse, g.points.col(q));

  for (int e = 1; e <= levels.extra_levels; ++e) {
    const int nk = static_cast<int>(std::floor(remaining * std::pow(2.0, -levels.nu * e) / weight_sum));
    if (nk <= 0) continue;
    auto candidates = level_dictionary(dim, order, top + e);
    std::vector<double> score(candidates.size(), 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c)
      for (Eigen::Index q = 0; q < residual.size(); ++q) {
        bool in = true;
        for (int i = 0; i < dim && in; ++i)
          in = g.points(i, q) >= candidates[c].support_lo(i) && g.points(i, q) < candidates[c].support_hi(i);
        if (in) score[c] += g.weights(q) * residual(q) * residual(q);
      }
    std::vector<std::size_t> order_idx(candidates.size());
    std::iota(order_idx.begin(), order_idx.end(), 0);
    std::stable_sort(order_idx.begin(), order_idx.end(),
                     [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    for (int p = 0; p < std::min<int>(nk, static_cast<int>(candidates.size())); ++p)
      dict.push_back(candidates[order_idx[p]]);
  }
  return fit_dictionary(f, dim, std::move(dict));
}

double l2_error(const ScalarField& f, const SplineApproximant& approx, int dim) {
  const Grid g = aligned_grid(dim, finest_level(approx.basis), dim == 1 ? 4 : 2, 10);
  double s = 0.0;
  for (Eigen::Index q = 0; q < g.points.cols(); ++q) {
    const double r = f(g.points.col(q)) - evaluate(approx, g.points.col(q));
    s += g.weights(q) * r * r;
  }
  return std::sqrt(s);
}

namespace {

struct AxisIntegrals {
  double density = 0.0;
  double whitened = 0.0;
  double mean = 0.0;
};

AxisIntegrals axis_integrals(int order, int level, int shift, double m, double sigma, double x,
                             double abs_tol) {
  const double scale = std::ldexp(1.0, level);
  const double lo = shift / scale;
  const double hi = (shift + order + 1) / scale;
  double a = lo, b = hi, center = 0.5 * (lo + hi);
  constexpr double kReach = 40.0;
  if (m > 0.0) {
    center = x / m;
    a = std::max(lo, center - kReach * sigma / m);
    b = std::min(hi, center + kReach * sigma / m);
  }
  AxisIntegrals out;
  if (!(b > a)) return out;
  std::vector<double> breaks{a, b};
  for (int q = 0; q <= order + 1; ++q) {
    const double knot = (shift + q) / scale;
    if (knot > a && knot < b) breaks.push_back(knot);
  }
  if (center > a && center < b) breaks.push_back(center);
  std::sort(breaks.begin(), breaks.end());

  const double norm = 1.0 / (std::sqrt(2.0 * M_PI) * sigma);
  auto basis = [&](double y) { return eval_cardinal(order, scale * y - shift); };
  auto gauss = [&](double y) {
    const double z = (x - m * y) / sigma;
    return norm * std::exp(-0.5 * z * z);
  };
  double err = 0.0;
  bool ok = true;
  for (std::size_t p = 0; p + 1 < breaks.size(); ++p) {
    const double pa = breaks[p], pb = breaks[p + 1];
    const double tol = abs_tol / (breaks.size() * 4.0);
    auto r0 = integrate_adaptive([&](double y) { return basis(y) * gauss(y); }, pa, pb, tol);
    auto r1 = integrate_adaptive([&](double y) { return basis(y) * gauss(y) * (x - m * y) / sigma; }, pa, pb, tol);
    auto r2 = integrate_adaptive([&](double y) { return basis(y) * gauss(y) * y; }, pa, pb, tol);
    out.density += r0.value;
    out.whitened += r1.value;
    out.mean += r2.value;
    err += r0.error + r1.error + r2.error;
    ok = ok && r0.converged && r1.converged && r2.converged;
  }
  if (!ok || err > abs_tol) {
    std::ostringstream msg;
    msg << "smoothed_basis_integral: tolerance not met (estimate " << out.density << ", error " << err
        << ", tolerance " << abs_tol << ")";
    throw NumericalError(msg.str());
  }
  return out;
}

}  // namespace

Eigen::VectorXd smoothed_basis_integral(const SplineBasisIndex& idx, SmoothedKind kind, double m,
                                        double sigma, const Eigen::Ref<const Eigen::VectorXd>& x,
                                        double abs_tol) {
  if (!(sigma > 0.0)) throw DomainError("smoothed_basis_integral: sigma must be positive");
  const int d = idx.dim();
  if (x.size() != d) throw DomainError("smoothed_basis_integral: dimension mismatch");
  std::vector<AxisIntegrals> axes;
  for (int i = 0; i < d; ++i)
    axes.push_back(axis_integrals(idx.order, idx.level[i], idx.shift[i], m, sigma, x(i),
                                  abs_tol / (2.0 * d)));
  auto product_except = [&](int skip) {
    double p = 1.0;
    for (int i = 0; i < d; ++i)
      if (i != skip) p *= axes[i].density;
    return p;
  };
  if (kind == SmoothedKind::Density) return Eigen::VectorXd::Constant(1, product_except(-1));
  Eigen::VectorXd out(d);
  for (int c = 0; c < d; ++c)
    out(c) = (kind == SmoothedKind::WhitenedMoment ? axes[c].whitened : axes[c].mean) * product_except(c);
  return out;
}

RateSweep rate_sweep(const ScalarField& f, double s_label, int dim, const std::vector<int>& budgets,
                     int order, const LevelAllocation& levels) {
  RateSweep sweep;
  sweep.s_label = s_label;
  sweep.expected_slope = -s_label / dim;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int budget : budgets) {
    const SplineApproximant approx = fit(f, dim, budget, order, levels);
    const double err = std::max(l2_error(f, approx, dim), 1e-300);
    sweep.rows.push_back({budget, approx.count(), err});
  }
  double max_err = 0.0;
  for (const auto& r : sweep.rows) {
    const double lx = std::log(static_cast<double>(r.basis_count)), ly = std::log(r.l2_error);
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
    max_err = std::max(max_err, r.l2_error);
  }
  const double n = static_cast<double>(sweep.rows.size());
  const double denom = n * sxx - sx * sx;
  sweep.slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
  sweep.floor = max_err < 1e-9;
  return sweep;
}

void write_rate_csv(const RateSweep& sweep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "budget,basis_count,l2_error,slope,expected_slope,floor\n";
  out.precision(17);
  for (const auto& r : sweep.rows)
    out << r.budget << ',' << r.basis_count << ',' << r.l2_error << ',' << sweep.slope << ','
        << sweep.expected_slope << ',' << (sweep.floor ? "true" : "false") << '\n';
}

}  // namespace fmlab
