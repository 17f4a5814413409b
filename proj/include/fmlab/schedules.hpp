#pragma once

#include <span>
#include <string>
#include <vector>

namespace fmlab {

// Mean/standard-deviation schedule of the conditional path
//   x_t = sigma_t * eps + m_t * x1,   eps ~ N(0, I),
// indexed in reverse time: t = 0 is the data, t = 1 the Gaussian source.
enum class ScheduleFamily { Affine, VariancePreserving, PowerLaw };

struct Schedule {
  ScheduleFamily family = ScheduleFamily::Affine;
  // PowerLaw: sigma_t = b0 * t^kappa,  1 - m_t = btilde0 * t^kappatilde.
  double b0 = 1.0;
  double kappa = 1.0;
  double btilde0 = 1.0;
  double kappatilde = 1.0;

  static Schedule affine();
  // sigma_t = sqrt(t), m_t = sqrt(1 - t).
  static Schedule variance_preserving();
  // Throws ParameterError when kappa < 1/2 or a scale is out of range.
  static Schedule power_law(double b0, double kappa, double btilde0, double kappatilde);
};

struct ScheduleValue {
  double sigma;
  double m;
  double dsigma;  // d sigma / dt, reverse time
  double dm;      // d m / dt, reverse time
};

// Throws DomainError for t <= 0 or t > 1.
ScheduleValue eval(const Schedule& schedule, double t);

// Forward-time view (tau = 1 - t); derivatives are with respect to tau.
ScheduleValue eval_forward(const Schedule& schedule, double tau);

double kappa_of(const Schedule& schedule);

// Checks the parameter constraints; throws ParameterError.
void check_parameters(const Schedule& schedule);

struct ValidationReport {
  double d0 = 1.0;                  // smallest D0 with 1/D0 <= sigma^2 + m^2 <= D0
  double min_energy = 0.0;          // min sigma^2 + m^2 on the grid
  double max_energy = 0.0;
  double max_derivative_sum = 0.0;  // max |sigma'| + |m'|
  double derivative_energy_integral = 0.0;  // trapezoid of (sigma')^2 + (m')^2 over the grid
  bool sigma_positive = true;
  bool m_in_range = true;
  bool sigma_monotone = true;
  bool m_monotone = true;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

// Grid must be nonempty with all points in (0, 1]; throws ParameterError otherwise.
ValidationReport validate(const Schedule& schedule, std::span<const double> grid);

std::string family_name(ScheduleFamily family);
ScheduleFamily parse_family(const std::string& name);

// Short identifier, e.g. "vp" or "powerlaw(b0=1,kappa=0.5,bt0=1,kt=1)".
std::string schedule_id(const Schedule& schedule);

}  // namespace fmlab
