#pragma once

#include <stdexcept>
#include <string>

namespace rbpmmh {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  ok = 0,
  config = 2,
  dimension = 3,
  missing_artifact = 4,
  numerical = 5,
};

/// Argument outside the mathematical domain of a model function (e.g. f <= 0).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Caller broke an interface precondition such as mismatched dimensions.
class ContractViolation : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class MissingArtifact : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Factorization or conditioning failure. Carries a condition-number estimate
/// when one is available (negative otherwise).
class NumericalError : public std::runtime_error {
public:
  NumericalError(const std::string& what, double condition_estimate = -1.0)
      : std::runtime_error(what), condition_estimate_(condition_estimate) {}

  double condition_estimate() const noexcept { return condition_estimate_; }

private:
  double condition_estimate_;
};

/// Every particle weight became -inf (or NaN) at some SMC step.
class DegenerateLikelihood : public NumericalError {
public:
  DegenerateLikelihood(const std::string& what, int step)
      : NumericalError(what), step_(step) {}

  int step() const noexcept { return step_; }

private:
  int step_;
};

}  // namespace rbpmmh
