#pragma once

#include <stdexcept>
#include <string>

namespace l96 {

// Bad input or violated precondition (dimension mismatch, empty grid, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Any failure of the numerics themselves; the CLI maps these to exit code 3.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrationBlowup : public NumericalFailure {
 public:
  explicit IntegrationBlowup(double time)
      : NumericalFailure("integration blew up (non-finite state) at t=" + std::to_string(time)),
        time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

// Regime in which a quantity is mathematically undefined: rescaling of a
// decaying solution, inversion of a singular covariance, ...
class DegenerateRegime : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

// The quasi-Gaussian response formula needs an invertible covariance.
class NotApplicable : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StoreConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace l96
