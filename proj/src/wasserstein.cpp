#include "fmlab/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "fmlab/error.hpp"
#include "fmlab/rng.hpp"

namespace fmlab {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_p(double p) {
  if (!(p >= 1.0)) throw ParameterError("wasserstein: p must be >= 1");
}

Eigen::VectorXd weights_of(const EmpiricalMeasure& m) {
  if (!m.uniform()) return m.weights;
  return Eigen::VectorXd::Constant(m.size(), 1.0 / static_cast<double>(m.size()));
}

RowMatrix cost_matrix(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p) {
  RowMatrix c(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      const double dist = (a.points.col(i) - b.points.col(j)).norm();
      c(i, j) = p == 1.0 ? dist : p == 2.0 ? dist * dist : std::pow(dist, p);
    }
  return c;
}

}  // namespace

EmpiricalMeasure make_measure(Eigen::MatrixXd points, Eigen::VectorXd weights) {
  if (points.cols() < 1 || points.rows() < 1) throw ParameterError("measure: need n >= 1 points");
  if (weights.size() != 0) {
    if (weights.size() != points.cols()) throw ParameterError("measure: weight count mismatch");
    if ((weights.array() < 0.0).any()) throw ParameterError("measure: negative weight");
    if (std::abs(weights.sum() - 1.0) > 1e-12) throw ParameterError("measure: weights must sum to 1");
  }
  return EmpiricalMeasure{std::move(points), std::move(weights)};
}

EmpiricalMeasure make_measure_1d(const std::vector<double>& values) {
  Eigen::MatrixXd pts(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) pts(0, static_cast<Eigen::Index>(i)) = values[i];
  return make_measure(std::move(pts));
}

double w_p_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p) {
  check_p(p);
  if (a.dim() != 1 || b.dim() != 1) throw DomainError("w_p_1d: measures must be one-dimensional");
  auto sorted = [](const EmpiricalMeasure& m) {
    const Eigen::VectorXd w = weights_of(m);
    std::vector<std::pair<double, double>> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.size(); ++i) v[static_cast<std::size_t>(i)] = {m.points(0, i), w(i)};
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto va = sorted(a), vb = sorted(b);

  if (a.uniform() && b.uniform() && a.size() == b.size()) {
    double acc = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i) acc += std::pow(std::abs(va[i].first - vb[i].first), p);
    return std::pow(acc / static_cast<double>(va.size()), 1.0 / p);
  }
  // Sweep the merged quantile levels.
  std::size_t i = 0, j = 0;
  double ra = va[0].second, rb = vb[0].second, acc = 0.0;
  while (i < va.size() && j < vb.size()) {
    const double mass = std::min(ra, rb);
    acc += mass * std::pow(std::abs(va[i].first - vb[j].first), p);
    ra -= mass;
    rb -= mass;
    if (ra <= 1e-15) {
      if (++i < va.size()) ra += va[i].second;
    }
    if (rb <= 1e-15) {
      if (++j < vb.size()) rb += vb[j].second;
    }
  }
  return std::pow(acc, 1.0 / p);
}

Assignment solve_assignment(const RowMatrix& cost) {
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != cost.rows()) throw ParameterError("assignment: cost matrix must be square");
  // Shortest augmenting paths on reduced costs c(i,j) - v[j] (Jonker-Volgenant).
  // x: row -> col, y: col -> row. Column reduction gives a feasible start where
  // every matched edge is tight.
  std::vector<double> v(n), d(n);
  std::vector<int> x(n, -1), y(n, -1), pred(n), cols(n);
  for (int j = n - 1; j >= 0; --j) {
    int imin = 0;
    double best = cost(0, j);
    for (int i = 1; i < n; ++i)
      if (cost(i, j) < best) {
        best = cost(i, j);
        imin = i;
      }
    v[j] = best;
    if (x[imin] < 0) {
      x[imin] = j;
      y[j] = imin;
    }
  }
  for (int f = 0; f < n; ++f) {
    if (x[f] >= 0) continue;
    const double* rowf = cost.data() + static_cast<std::ptrdiff_t>(f) * n;
    for (int j = 0; j < n; ++j) {
      d[j] = rowf[j] - v[j];
      pred[j] = f;
      cols[j] = j;
    }
    // cols[0, lo) scanned, [lo, up) at the current minimum, [up, n) the rest
    int lo = 0, up = 0, last = 0, end = -1;
    double mn = 0.0;
    while (end < 0) {
      if (lo == up) {
        last = lo;
        mn = d[cols[up++]];
        for (int k = up; k < n; ++k) {
          const int j = cols[k];
          const double h = d[j];
          if (h <= mn) {
            if (h < mn) {
              up = lo;
              mn = h;
            }
            std::swap(cols[k], cols[up++]);
          }
        }
        for (int k = lo; k < up; ++k)
          if (y[cols[k]] < 0) {
            end = cols[k];
            break;
          }
        if (end >= 0) break;
      }
      const int j1 = cols[lo++];
      const int i = y[j1];
      const double* row = cost.data() + static_cast<std::ptrdiff_t>(i) * n;
      const double u1 = row[j1] - v[j1] - mn;
      for (int k = up; k < n; ++k) {
        const int j = cols[k];
        const double h = row[j] - v[j] - u1;
        if (h < d[j]) {
          d[j] = h;
          pred[j] = i;
          if (h == mn) {
            if (y[j] < 0) {
              end = j;
              break;
            }
            std::swap(cols[k], cols[up++]);
          }
        }
      }
    }
    for (int k = 0; k < last; ++k) {
      const int j = cols[k];
      v[j] += d[j] - mn;
    }
    for (int j = end;;) {
      const int i = pred[j];
      y[j] = i;
      std::swap(j, x[i]);
      if (i == f) break;
    }
  }
  Assignment out;
  out.row_to_col.assign(x.begin(), x.end());
  for (int i = 0; i < n; ++i) out.total_cost += cost(i, x[static_cast<std::size_t>(i)]);
  return out;
}

ExactTransport w_p_exact_transport(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p) {
  check_p(p);
  if (a.dim() != b.dim()) throw DomainError("w_p_exact: dimension mismatch");
  if (!a.uniform() || !b.uniform()) throw ParameterError("w_p_exact: uniform weights required");
  if (a.size() != b.size()) throw ParameterError("w_p_exact: unequal sizes, resample upstream");
  if (a.size() > kExactSolverCap)
    throw ParameterError("w_p_exact: n = " + std::to_string(a.size()) + " exceeds the solver cap 4096");
  const RowMatrix c = cost_matrix(a, b, p);
  const Assignment sol = solve_assignment(c);
  ExactTransport out;
  out.matching = sol.row_to_col;
  out.pair_costs.resize(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.pair_costs(i) = c(i, sol.row_to_col[static_cast<std::size_t>(i)]);
  out.value = std::pow(std::max(0.0, out.pair_costs.mean()), 1.0 / p);
  return out;
}

double w_p_exact(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p) {
  return w_p_exact_transport(a, b, p).value;
}

double matched_pair_bootstrap_se(const Eigen::VectorXd& pair_costs, double p, int resamples,
                                 std::uint64_t seed) {
  if (resamples < 2 || pair_costs.size() < 1) throw ParameterError("bootstrap: need >= 2 resamples");
  Engine rng = make_engine(seed, 0xb007);
  const auto n = static_cast<std::uint64_t>(pair_costs.size());
  std::vector<double> stats(static_cast<std::size_t>(resamples));
  for (auto& s : stats) {
    double acc = 0.0;
    for (std::uint64_t k = 0; k < n; ++k) acc += pair_costs(static_cast<Eigen::Index>(rng() % n));
    s = std::pow(acc / static_cast<double>(n), 1.0 / p);
  }
  const double mean = std::accumulate(stats.begin(), stats.end(), 0.0) / resamples;
  double var = 0.0;
  for (double s : stats) var += (s - mean) * (s - mean);
  return std::sqrt(var / (resamples - 1));
}

namespace {

struct EntropicSolve {
  double cost = 0.0;  // dual objective <a, f> + <b, g>
  double marginal_error = 0.0;
  int iterations = 0;
  bool converged = false;
};

double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

// -e log sum_j exp((h_j - c_ij) / e + log_w_j) for every row i of c. Rows are
// independent, so large problems split them over threads without changing bits.
void soft_min_rows(const RowMatrix& c, const Eigen::VectorXd& h, const Eigen::VectorXd& log_w, double e,
                   Eigen::VectorXd& out) {
  const Eigen::ArrayXd shift = h.array() / e + log_w.array();
  auto rows = [&](Eigen::Index lo, Eigen::Index hi) {
    Eigen::ArrayXd z(c.cols());
    for (Eigen::Index i = lo; i < hi; ++i) {
      z = shift - c.row(i).transpose().array() / e;
      out(i) = -e * log_sum_exp(z.matrix());
    }
  };
  const Eigen::Index n = c.rows();
  const int workers = c.size() < (1 << 16)
                          ? 1
                          : static_cast<int>(std::min<Eigen::Index>(
                                n, std::clamp(std::thread::hardware_concurrency(), 1u, 8u)));
  if (workers == 1) return rows(0, n);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(rows, n * w / workers, n * (w + 1) / workers);
  for (auto& t : pool) t.join();
}

// Epsilon scaling: halve from the largest cost down to the target, a few
// sweeps per stage, then iterate at eps until the row marginal error is <= tol.
template <class Sweep, class Error>
void anneal(double c_max, double eps, int max_iter, double tol, Sweep sweep, Error error,
            EntropicSolve& out) {
  double e = std::max(eps, c_max);
  while (e > eps) {
    for (int k = 0; k < 5; ++k) sweep(e);
    e = std::max(eps, 0.5 * e);
  }
  for (int it = 0; it < max_iter; ++it) {
    sweep(eps);
    ++out.iterations;
    if (it % 5 == 4 || it + 1 == max_iter) {
      out.marginal_error = error();
      if (out.marginal_error <= tol) {
        out.converged = true;
        break;
      }
    }
  }
}

EntropicSolve entropic(const RowMatrix& c, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                       double eps, int max_iter, double tol) {
  const RowMatrix ct = c.transpose();
  const Eigen::VectorXd log_a = a.array().log(), log_b = b.array().log();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(c.rows()), g = Eigen::VectorXd::Zero(c.cols());
  Eigen::VectorXd tf(c.rows());
  EntropicSolve out;
  auto sweep = [&](double e) {
    soft_min_rows(c, g, log_b, e, f);
    soft_min_rows(ct, f, log_a, e, g);
  };
  // After the g update the column marginals are exact; measure the rows.
  auto error = [&] {
    soft_min_rows(c, g, log_b, eps, tf);
    return (a.array() * (((f - tf) / eps).array().exp() - 1.0).abs()).sum();
  };
  anneal(c.maxCoeff(), eps, max_iter, tol, sweep, error, out);
  out.cost = a.dot(f) + b.dot(g);
  return out;
}

// Symmetric problem (a against itself): the averaged update f <- (f + T f) / 2
// converges where the alternating one oscillates.
EntropicSolve entropic_symmetric(const RowMatrix& c, const Eigen::VectorXd& a, double eps, int max_iter,
                                 double tol) {
  const Eigen::VectorXd log_a = a.array().log();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(c.rows()), tf(c.rows());
  EntropicSolve out;
  auto sweep = [&](double e) {
    soft_min_rows(c, f, log_a, e, tf);
    f = 0.5 * (f + tf);
  };
  auto error = [&] {
    soft_min_rows(c, f, log_a, eps, tf);
    return (a.array() * (((f - tf) / eps).array().exp() - 1.0).abs()).sum();
  };
  anneal(c.maxCoeff(), eps, max_iter, tol, sweep, error, out);
  out.cost = 2.0 * a.dot(f);
  return out;
}

}  // namespace

SinkhornResult sinkhorn_w_p(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double p,
                            double eps, int max_iter, double tol) {
  check_p(p);
  if (!(eps > 0.0)) throw ParameterError("sinkhorn: eps must be positive");
  if (max_iter < 1) throw ParameterError("sinkhorn: max_iter must be >= 1");
  if (a.dim() != b.dim()) throw DomainError("sinkhorn: dimension mismatch");
  const Eigen::VectorXd wa = weights_of(a), wb = weights_of(b);
  const EntropicSolve ab = entropic(cost_matrix(a, b, p), wa, wb, eps, max_iter, tol);
  const EntropicSolve aa = entropic_symmetric(cost_matrix(a, a, p), wa, eps, max_iter, tol);
  const EntropicSolve bb = entropic_symmetric(cost_matrix(b, b, p), wb, eps, max_iter, tol);
  SinkhornResult out;
  const double divergence = ab.cost - 0.5 * (aa.cost + bb.cost);
  out.value = std::pow(std::max(0.0, divergence), 1.0 / p);
  out.converged = ab.converged && aa.converged && bb.converged;
  out.iterations = ab.iterations;
  out.marginal_error = ab.marginal_error;
  return out;
}

Eigen::MatrixXd resample_columns(const Eigen::MatrixXd& points, Eigen::Index k, std::uint64_t seed) {
  if (k < 1 || k > points.cols()) throw ParameterError("resample_columns: bad subsample size");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(points.cols()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Engine rng = make_engine(seed, 0x5e1ec7);
  // Partial Fisher-Yates keeps the draw independent of the standard library's shuffle.
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto span = static_cast<std::uint64_t>(points.cols() - i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(i + static_cast<Eigen::Index>(rng() % span))]);
  }
  Eigen::MatrixXd out(points.rows(), k);
  for (Eigen::Index i = 0; i < k; ++i) out.col(i) = points.col(idx[static_cast<std::size_t>(i)]);
  return out;
}

double conv_gap_bound(double m, double sigma, double V, int d) {
  if (!(V >= 0.0) || !(sigma >= 0.0) || !(m >= 0.0 && m <= 1.0) || d < 1)
    throw ParameterError("conv_gap_bound: need V >= 0, sigma >= 0, m in [0, 1], d >= 1");
  return std::sqrt((1.0 - m) * (1.0 - m) * V + d * sigma * sigma);
}

}  // namespace fmlab
