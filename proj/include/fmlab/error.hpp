#pragma once

#include <stdexcept>
#include <string>

namespace fmlab {

// t outside the admissible time window, d mismatch, and similar.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Invalid construction parameters (kappa < 1/2, empty grids, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// sigma_t has underflowed; a division by it would be meaningless.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss, state, or exponent; carries a human-readable diagnostic.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fmlab
