#pragma once

#include <stdexcept>
#include <string>

namespace mibench {

// Caller broke a documented precondition (dimension mismatch, bad index, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Langevin integration left the finite region.
class SimulationFailure : public std::runtime_error {
 public:
  SimulationFailure(const std::string& what, long long step)
      : std::runtime_error(what), step_(step) {}
  long long step() const noexcept { return step_; }

 private:
  long long step_;
};

// A fit (TICA, quadrature, ...) could not produce a usable model.
class FitFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Batches cannot be drawn from the data as configured.
class EstimationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class TrainingAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace mibench
