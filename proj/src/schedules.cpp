#include "fmlab/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fmlab/error.hpp"

namespace fmlab {

namespace {
constexpr double kEndpointGuard = 1e-12;
}

Schedule Schedule::affine() { return Schedule{ScheduleFamily::Affine, 1.0, 1.0, 1.0, 1.0}; }

Schedule Schedule::variance_preserving() {
  return Schedule{ScheduleFamily::VariancePreserving, 1.0, 0.5, 0.5, 1.0};
}

Schedule Schedule::power_law(double b0, double kappa, double btilde0, double kappatilde) {
  Schedule s{ScheduleFamily::PowerLaw, b0, kappa, btilde0, kappatilde};
  check_parameters(s);
  return s;
}

void check_parameters(const Schedule& s) {
  if (s.family != ScheduleFamily::PowerLaw) return;
  if (!(s.kappa >= 0.5)) throw ParameterError("schedule: kappa must be >= 1/2");
  if (!(s.b0 > 0.0)) throw ParameterError("schedule: b0 must be positive");
  if (!(s.kappatilde > 0.0)) throw ParameterError("schedule: kappatilde must be positive");
  // m_t = 1 - btilde0 t^kappatilde stays in [0, 1] on (0, 1] only for btilde0 <= 1.
  if (!(s.btilde0 > 0.0 && s.btilde0 <= 1.0))
    throw ParameterError("schedule: btilde0 must lie in (0, 1]");
}

ScheduleValue eval(const Schedule& s, double t) {
  if (!(t > 0.0) || t > 1.0) throw DomainError("schedule eval: t must lie in (0, 1]");
  switch (s.family) {
    case ScheduleFamily::Affine:
      return {t, 1.0 - t, 1.0, -1.0};
    case ScheduleFamily::VariancePreserving: {
      const double tg = std::min(t, 1.0 - kEndpointGuard);
      return {std::sqrt(t), std::sqrt(1.0 - t), 0.5 / std::sqrt(t), -0.5 / std::sqrt(1.0 - tg)};
    }
    case ScheduleFamily::PowerLaw: {
      check_parameters(s);
      const double sigma = s.b0 * std::pow(t, s.kappa);
      const double one_minus_m = s.btilde0 * std::pow(t, s.kappatilde);
      return {sigma, 1.0 - one_minus_m, s.kappa * sigma / t, -s.kappatilde * one_minus_m / t};
    }
  }
  throw ParameterError("schedule: unknown family");
}

ScheduleValue eval_forward(const Schedule& s, double tau) {
  ScheduleValue v = eval(s, 1.0 - tau);
  v.dsigma = -v.dsigma;
  v.dm = -v.dm;
  return v;
}

double kappa_of(const Schedule& s) {
  switch (s.family) {
    case ScheduleFamily::Affine: return 1.0;
    case ScheduleFamily::VariancePreserving: return 0.5;
    case ScheduleFamily::PowerLaw: return s.kappa;
  }
  return s.kappa;
}

ValidationReport validate(const Schedule& s, std::span<const double> grid_in) {
  if (grid_in.empty()) throw ParameterError("validate: empty grid");
  std::vector<double> grid(grid_in.begin(), grid_in.end());
  std::sort(grid.begin(), grid.end());
  if (!(grid.front() > 0.0) || grid.back() > 1.0)
    throw ParameterError("validate: grid points must lie in (0, 1]");
  check_parameters(s);

  ValidationReport r;
  r.min_energy = INFINITY;
  r.max_energy = 0.0;
  ScheduleValue prev{};
  double prev_t = 0.0;
  double prev_density = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    const ScheduleValue v = eval(s, t);
    const double energy = v.sigma * v.sigma + v.m * v.m;
    r.min_energy = std::min(r.min_energy, energy);
    r.max_energy = std::max(r.max_energy, energy);
    r.max_derivative_sum = std::max(r.max_derivative_sum, std::abs(v.dsigma) + std::abs(v.dm));
    const double density = v.dsigma * v.dsigma + v.dm * v.dm;
    if (!(v.sigma > 0.0)) r.sigma_positive = false;
    if (t < 1.0 && !(v.m > 0.0 && v.m <= 1.0)) r.m_in_range = false;
    if (i > 0) {
      if (v.sigma < prev.sigma) r.sigma_monotone = false;
      if (v.m > prev.m) r.m_monotone = false;
      r.derivative_energy_integral += 0.5 * (density + prev_density) * (t - prev_t);
    }
    prev = v;
    prev_t = t;
    prev_density = density;
  }
  r.d0 = std::max(r.max_energy, 1.0 / r.min_energy);
  if (!r.sigma_positive) r.violations.emplace_back("sigma_t not positive on grid");
  if (!r.m_in_range) r.violations.emplace_back("m_t outside (0, 1] on grid");
  if (!r.sigma_monotone) r.violations.emplace_back("sigma_t not nondecreasing");
  if (!r.m_monotone) r.violations.emplace_back("m_t not nonincreasing");
  if (!std::isfinite(r.max_derivative_sum)) r.violations.emplace_back("non-finite derivative");
  return r;
}

std::string family_name(ScheduleFamily family) {
  switch (family) {
    case ScheduleFamily::Affine: return "affine";
    case ScheduleFamily::VariancePreserving: return "variance_preserving";
    case ScheduleFamily::PowerLaw: return "power_law";
  }
  return "unknown";
}

ScheduleFamily parse_family(const std::string& name) {
  if (name == "affine") return ScheduleFamily::Affine;
  if (name == "variance_preserving" || name == "vp") return ScheduleFamily::VariancePreserving;
  if (name == "power_law" || name == "powerlaw") return ScheduleFamily::PowerLaw;
  throw ParameterError("unknown schedule family '" + name + "'");
}

std::string schedule_id(const Schedule& s) {
  switch (s.family) {
    case ScheduleFamily::Affine: return "affine";
    case ScheduleFamily::VariancePreserving: return "vp";
    case ScheduleFamily::PowerLaw: {
      std::ostringstream os;
      os << "powerlaw(b0=" << s.b0 << ",kappa=" << s.kappa << ",bt0=" << s.btilde0
         << ",kt=" << s.kappatilde << ")";
      return os.str();
    }
  }
  return "unknown";
}

}  // namespace fmlab
