#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace flowlik {

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

// Invalid or inconsistent configuration (bad JSON, empty support, ...).
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// A computation produced non-finite or otherwise unusable numbers.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Optimizer failed to meet its tolerance; the best iterate is kept so the
// caller can still inspect or report it.
class ConvergenceError : public std::runtime_error {
  public:
    ConvergenceError(const std::string& what, std::vector<double> best, double best_value)
        : std::runtime_error(what), best_(std::move(best)), best_value_(best_value) {}

    const std::vector<double>& best() const noexcept { return best_; }
    double best_value() const noexcept { return best_value_; }

  private:
    std::vector<double> best_;
    double best_value_;
};

} // namespace flowlik
