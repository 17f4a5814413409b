#include "fmlab/targets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "fmlab/bspline.hpp"
#include "fmlab/error.hpp"
#include "fmlab/quadrature.hpp"
#include "fmlab/rng.hpp"

namespace fmlab {

struct AxisTable {
  std::vector<double> edges;  // panel edges, aligned with every breakpoint
  std::vector<double> cdf;    // cumulative mass at each edge
};

struct TargetTables {
  // SplineMixture geometry
  int bases_per_dim = 0;
  double knot_spacing = 0.0;
  // one table per axis (d <= 2)
  std::vector<AxisTable> axes;
  std::vector<std::vector<double>> breaks;  // sorted breakpoints per axis
};

namespace {

constexpr int kGaussOrder = 8;

double bump(double u) {
  if (std::abs(u) >= 1.0) return 0.0;
  const double v = 1.0 - u * u;
  return v * v * v;
}
constexpr double kBumpMass = 32.0 / 35.0;  // integral of (1 - u^2)^3 over [-1, 1]

bool inside_cube(const Eigen::Ref<const Eigen::VectorXd>& x) {
  return (x.array().abs() <= 1.0).all();
}

// Unnormalized density q(x) on the cube.
double unnormalized(const TargetDensity& t, const Eigen::Ref<const Eigen::VectorXd>& x) {
  switch (t.kind) {
    case TargetKind::Uniform:
      return 1.0;
    case TargetKind::SplineMixture: {
      const int nb = t.tables->bases_per_dim;
      const double h = t.tables->knot_spacing;
      const double lo = -1.0 + kTargetCollar;
      // Up to four active cubic bases per axis.
      std::vector<std::array<std::pair<int, double>, 4>> active(t.dim);
      std::vector<int> count(t.dim, 0);
      for (int i = 0; i < t.dim; ++i) {
        const double u = (x(i) - lo) / h;
        const int top = static_cast<int>(std::floor(u));
        for (int b = top - 3; b <= top; ++b) {
          if (b < 0 || b >= nb) continue;
          const double v = eval_cardinal(3, u - b);
          if (v != 0.0) active[i][count[i]++] = {b, v};
        }
        if (count[i] == 0) return 1.0;
      }
      double sum = 0.0;
      if (t.dim == 1) {
        for (int a = 0; a < count[0]; ++a) sum += t.coefficients[active[0][a].first] * active[0][a].second;
      } else {
        // General multi-index walk.
        std::vector<int> pos(t.dim, 0);
        while (true) {
          std::size_t flat = 0;
          double prod = 1.0;
          for (int i = 0; i < t.dim; ++i) {
            flat = flat * nb + active[i][pos[i]].first;
            prod *= active[i][pos[i]].second;
          }
          sum += t.coefficients[flat] * prod;
          int i = t.dim - 1;
          while (i >= 0 && ++pos[i] == count[i]) pos[i--] = 0;
          if (i < 0) break;
        }
      }
      return 1.0 + sum;
    }
    case TargetKind::PerturbedUniform: {
      const double w = t.coefficients[0];
      const std::size_t stride = 1 + t.dim;
      double sum = 0.0;
      for (std::size_t k = 1; k + stride <= t.coefficients.size() + 0; k += stride) {
        double prod = t.coefficients[k];
        for (int i = 0; i < t.dim && prod != 0.0; ++i) prod *= bump((x(i) - t.coefficients[k + 1 + i]) / w);
        sum += prod;
      }
      return 1.0 + sum;
    }
  }
  return 0.0;
}

std::vector<double> axis_breaks(const TargetDensity& t) {
  std::vector<double> b{-1.0, 1.0};
  if (t.kind == TargetKind::SplineMixture) {
    const double lo = -1.0 + kTargetCollar;
    for (int i = 0; i <= t.tables->bases_per_dim + 3; ++i) b.push_back(lo + i * t.tables->knot_spacing);
  } else if (t.kind == TargetKind::PerturbedUniform) {
    const double w = t.coefficients[0];
    const std::size_t stride = 1 + t.dim;
    for (std::size_t k = 1; k + stride <= t.coefficients.size(); k += stride)
      for (int i = 0; i < t.dim; ++i) {
        const double c = t.coefficients[k + 1 + i];
        for (double e : {c - w, c, c + w}) b.push_back(std::clamp(e, -1.0, 1.0));
      }
  }
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end(), [](double a, double c) { return std::abs(a - c) < 1e-14; }),
          b.end());
  return b;
}

// Refines breakpoints into roughly `target_panels` panels.
std::vector<double> refine(const std::vector<double>& breaks, int target_panels) {
  std::vector<double> edges{breaks.front()};
  const double span = breaks.back() - breaks.front();
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const double len = breaks[i + 1] - breaks[i];
    const int pieces = std::max(1, static_cast<int>(std::ceil(target_panels * len / span)));
    for (int p = 1; p <= pieces; ++p) edges.push_back(breaks[i] + len * p / pieces);
    edges.back() = breaks[i + 1];
  }
  return edges;
}

// Marginal density of coordinate `axis` at u (unnormalized q), d <= 2.
double marginal_q(const TargetDensity& t, int axis, double u) {
  if (t.dim == 1) {
    Eigen::VectorXd x(1);
    x << u;
    return unnormalized(t, x);
  }
  const int other = 1 - axis;
  Eigen::VectorXd x(2);
  x(axis) = u;
  const auto& br = t.tables->breaks[other];
  return integrate_breaks(
      [&](double v) {
        x(other) = v;
        return unnormalized(t, x);
      },
      br, kGaussOrder);
}

double gl_partial(const TargetDensity& t, int axis, double a, double b) {
  return integrate_panels([&](double u) { return marginal_q(t, axis, u); }, a, b, 1, kGaussOrder) /
         t.normalizer;
}

void finalize(TargetDensity& t, std::shared_ptr<TargetTables> tables) {
  t.tables = tables;
  // Normalizer from exact masses.
  const double cube = std::pow(2.0, t.dim);
  switch (t.kind) {
    case TargetKind::Uniform:
      t.normalizer = cube;
      break;
    case TargetKind::SplineMixture: {
      double s = 0.0;
      for (double a : t.coefficients) s += a;
      t.normalizer = cube + s * std::pow(tables->knot_spacing, t.dim);
      break;
    }
    case TargetKind::PerturbedUniform: {
      const double w = t.coefficients[0];
      const std::size_t stride = 1 + t.dim;
      double s = 0.0;
      for (std::size_t k = 1; k + stride <= t.coefficients.size(); k += stride) s += t.coefficients[k];
      t.normalizer = cube + s * std::pow(w * kBumpMass, t.dim);
      break;
    }
  }
  if (!(t.normalizer > 0.0)) throw ParameterError("target: nonpositive total mass");

  if (t.dim <= 2) {
    tables->breaks.clear();
    for (int i = 0; i < t.dim; ++i) tables->breaks.push_back(axis_breaks(t));
  }

  // Density range on a dense grid.
  double qmin = INFINITY, qmax = 0.0;
  if (t.kind == TargetKind::Uniform) {
    qmin = qmax = 1.0;
  } else if (t.dim == 1) {
    const auto grid = refine(tables->breaks[0], 4000);
    Eigen::VectorXd x(1);
    for (double g : grid) {
      x << g;
      const double q = unnormalized(t, x);
      qmin = std::min(qmin, q), qmax = std::max(qmax, q);
    }
  } else if (t.dim == 2) {
    const auto grid = refine(tables->breaks[0], 400);
    Eigen::VectorXd x(2);
    for (double a : grid)
      for (double b : grid) {
        x << a, b;
        const double q = unnormalized(t, x);
        qmin = std::min(qmin, q), qmax = std::max(qmax, q);
      }
  } else {
    Engine rng = make_engine(0x5eed, 0);
    Eigen::VectorXd x(t.dim);
    for (int s = 0; s < 200000; ++s) {
      for (int i = 0; i < t.dim; ++i) x(i) = 2.0 * uniform01(rng) - 1.0;
      const double q = unnormalized(t, x);
      qmin = std::min(qmin, q), qmax = std::max(qmax, q);
    }
  }
  if (!(qmin > 0.0)) throw ParameterError("target: density not bounded away from zero");
  const double pmin = qmin / t.normalizer;
  const double pmax = qmax / t.normalizer;
  t.pmax = 1.02 * pmax;
  t.c0 = std::max(t.pmax, 1.0 / pmin);

  // Axis CDF tables.
  if (t.dim <= 2) {
    tables->axes.clear();
    for (int axis = 0; axis < t.dim; ++axis) {
      AxisTable table;
      table.edges = refine(tables->breaks[axis], t.dim == 1 ? 1024 : 128);
      table.cdf.assign(table.edges.size(), 0.0);
      for (std::size_t i = 1; i < table.edges.size(); ++i)
        table.cdf[i] = table.cdf[i - 1] + gl_partial(t, axis, table.edges[i - 1], table.edges[i]);
      tables->axes.push_back(std::move(table));
    }
  }
}

double axis_cdf(const TargetDensity& t, int axis, double x) {
  if (x <= -1.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const AxisTable& table = t.tables->axes[axis];
  const auto it = std::upper_bound(table.edges.begin(), table.edges.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - table.edges.begin()) - 1;
  return std::min(1.0, table.cdf[i] + gl_partial(t, axis, table.edges[i], x));
}

double inverse_cdf_1d(const TargetDensity& t, double u) {
  const AxisTable& table = t.tables->axes[0];
  const double total = table.cdf.back();
  const double target = u * total;
  auto it = std::upper_bound(table.cdf.begin(), table.cdf.end(), target);
  std::size_t i = static_cast<std::size_t>(it - table.cdf.begin());
  i = std::clamp<std::size_t>(i, 1, table.cdf.size() - 1) - 1;
  double a = table.edges[i], b = table.edges[i + 1];
  const double base = table.cdf[i];
  // Safeguarded Newton on the panel.
  double x = a + (b - a) * std::clamp((target - base) / std::max(table.cdf[i + 1] - base, 1e-300), 0.0, 1.0);
  Eigen::VectorXd p(1);
  for (int iter = 0; iter < 60; ++iter) {
    const double f = base + gl_partial(t, 0, table.edges[i], x) - target;
    if (f > 0.0) b = x; else a = x;
    p << x;
    const double dens = unnormalized(t, p) / t.normalizer;
    double next = x - f / dens;
    if (!(next > a && next < b)) next = 0.5 * (a + b);
    if (std::abs(next - x) < 1e-15 || b - a < 1e-15) {
      x = next;
      break;
    }
    x = next;
  }
  return std::clamp(x, -1.0, 1.0);
}

}  // namespace

TargetDensity make_uniform(int dim) {
  if (dim < 1) throw ParameterError("target: dim must be positive");
  TargetDensity t;
  t.dim = dim;
  t.kind = TargetKind::Uniform;
  t.smoothness = 1e300;  // any s; reported as infinite smoothness in the interior
  finalize(t, std::make_shared<TargetTables>());
  return t;
}

TargetDensity make_spline_mixture(int dim, std::vector<double> coefficients, double smoothness) {
  if (dim < 1) throw ParameterError("target: dim must be positive");
  const int nb = static_cast<int>(std::lround(std::pow(static_cast<double>(coefficients.size()), 1.0 / dim)));
  if (nb < 1 || static_cast<std::size_t>(std::pow(nb, dim) + 0.5) != coefficients.size())
    throw ParameterError("spline mixture: coefficient count must be a perfect d-th power");
  TargetDensity t;
  t.dim = dim;
  t.kind = TargetKind::SplineMixture;
  t.coefficients = std::move(coefficients);
  t.smoothness = smoothness;
  auto tables = std::make_shared<TargetTables>();
  tables->bases_per_dim = nb;
  tables->knot_spacing = (2.0 - 2.0 * kTargetCollar) / (nb + 3);
  finalize(t, tables);
  return t;
}

TargetDensity make_spline_mixture_random(int dim, int bases_per_dim, std::uint64_t generator_seed,
                                         double amplitude, double smoothness) {
  Engine rng = make_engine(generator_seed, 0x7a9e7);
  std::vector<double> alpha(static_cast<std::size_t>(std::pow(bases_per_dim, dim) + 0.5));
  for (double& a : alpha) a = amplitude * (1.5 * uniform01(rng) - 0.5);
  return make_spline_mixture(dim, std::move(alpha), smoothness);
}

TargetDensity make_perturbed_uniform(int dim, std::vector<double> coefficients, double smoothness) {
  if (dim < 1) throw ParameterError("target: dim must be positive");
  if (coefficients.empty() || (coefficients.size() - 1) % (1 + dim) != 0 || !(coefficients[0] > 0.0))
    throw ParameterError("perturbed uniform: coefficients must be [w, a_1, c_1..., ...] with w > 0");
  const double w = coefficients[0];
  for (std::size_t k = 1; k < coefficients.size(); k += 1 + dim)
    for (int i = 0; i < dim; ++i)
      if (std::abs(coefficients[k + 1 + i]) + w > 1.0 - kTargetCollar + 1e-12)
        throw ParameterError("perturbed uniform: bump leaves the interior");
  TargetDensity t;
  t.dim = dim;
  t.kind = TargetKind::PerturbedUniform;
  t.coefficients = std::move(coefficients);
  t.smoothness = smoothness;
  finalize(t, std::make_shared<TargetTables>());
  return t;
}

TargetDensity make_perturbed_uniform_random(int dim, int bumps, std::uint64_t generator_seed,
                                            double smoothness) {
  Engine rng = make_engine(generator_seed, 0xb0b);
  const double w = 0.3;
  std::vector<double> c{w};
  for (int k = 0; k < bumps; ++k) {
    c.push_back(1.3 * uniform01(rng) - 0.5);
    for (int i = 0; i < dim; ++i) c.push_back((2.0 * uniform01(rng) - 1.0) * (1.0 - kTargetCollar - w));
  }
  return make_perturbed_uniform(dim, std::move(c), smoothness);
}

double pdf(const TargetDensity& t, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != t.dim) throw DomainError("pdf: dimension mismatch");
  if (!inside_cube(x)) return 0.0;
  return unnormalized(t, x) / t.normalizer;
}

Eigen::MatrixXd sample(const TargetDensity& t, std::uint64_t seed, Eigen::Index n) {
  if (n < 1) throw ParameterError("sample: n must be >= 1");
  Engine rng = make_engine(seed, 0x5a3b1e);
  Eigen::MatrixXd out(t.dim, n);
  if (t.kind == TargetKind::Uniform) {
    for (Eigen::Index j = 0; j < n; ++j)
      for (int i = 0; i < t.dim; ++i) out(i, j) = 2.0 * uniform01(rng) - 1.0;
    return out;
  }
  if (t.dim == 1) {
    for (Eigen::Index j = 0; j < n; ++j) out(0, j) = inverse_cdf_1d(t, uniform01(rng));
    return out;
  }
  Eigen::VectorXd x(t.dim);
  std::uint64_t proposals = 0;
  for (Eigen::Index j = 0; j < n;) {
    for (int i = 0; i < t.dim; ++i) x(i) = 2.0 * uniform01(rng) - 1.0;
    ++proposals;
    if (uniform01(rng) * t.pmax < pdf(t, x)) out.col(j++) = x;
    if (proposals > 10000 && static_cast<double>(j) / proposals < 1e-4)
      throw NumericalError("sample: rejection acceptance rate below 1e-4");
  }
  return out;
}

double cdf(const TargetDensity& t, double x) {
  if (t.dim != 1) throw DomainError("cdf: target is not one-dimensional");
  return marginal_cdf(t, 0, x);
}

double marginal_cdf(const TargetDensity& t, int axis, double x) {
  if (axis < 0 || axis >= t.dim) throw DomainError("marginal_cdf: bad axis");
  if (t.kind == TargetKind::Uniform) return std::clamp(0.5 * (x + 1.0), 0.0, 1.0);
  if (t.dim > 2) throw DomainError("marginal_cdf: only d <= 2 is tabulated");
  return axis_cdf(t, axis, x);
}

double second_moment(const TargetDensity& t) {
  if (t.kind == TargetKind::Uniform) return t.dim / 3.0;
  if (t.dim == 1) {
    Eigen::VectorXd x(1);
    return integrate_breaks(
        [&](double u) {
          x << u;
          return u * u * pdf(t, x);
        },
        refine(t.tables->breaks[0], 64), kGaussOrder);
  }
  if (t.dim == 2) {
    const auto edges = refine(t.tables->breaks[0], 64);
    Eigen::VectorXd x(2);
    return integrate_breaks(
        [&](double u) {
          return integrate_breaks(
              [&](double v) {
                x << u, v;
                return (u * u + v * v) * pdf(t, x);
              },
              edges, kGaussOrder);
        },
        edges, kGaussOrder);
  }
  const Eigen::MatrixXd s = sample(t, 0x3c3c, 1 << 20);
  return s.colwise().squaredNorm().mean();
}

std::string kind_name(TargetKind kind) {
  switch (kind) {
    case TargetKind::Uniform: return "uniform";
    case TargetKind::SplineMixture: return "spline_mixture";
    case TargetKind::PerturbedUniform: return "perturbed_uniform";
  }
  return "unknown";
}

TargetKind parse_kind(const std::string& name) {
  if (name == "uniform") return TargetKind::Uniform;
  if (name == "spline_mixture") return TargetKind::SplineMixture;
  if (name == "perturbed_uniform") return TargetKind::PerturbedUniform;
  throw ParameterError("unknown target kind '" + name + "'");
}

std::string target_id(const TargetDensity& t) {
  std::ostringstream os;
  os << kind_name(t.kind) << "_d" << t.dim;
  return os.str();
}

}  // namespace fmlab
