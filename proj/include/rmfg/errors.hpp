#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rmfg {

/// Malformed or non-finite input to an operation.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A stated invariant (probability measure, ellipticity, symmetry) does not hold.
class InvariantViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Linear-solve breakdown or a non-finite value produced inside a solver.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
    explicit NumericalError(const std::string& what)
        : std::runtime_error(what), step_(static_cast<std::size_t>(-1)) {}

    std::size_t step() const { return step_; }

private:
    std::size_t step_;
};

/// Fixed-point iteration hit its iteration cap.
class NonConvergence : public std::runtime_error {
public:
    NonConvergence(const std::string& what, double last_gap, int iterations)
        : std::runtime_error(what + ": gap " + std::to_string(last_gap) + " after " +
                             std::to_string(iterations) + " iterations"),
          last_gap_(last_gap), iterations_(iterations) {}

    double last_gap() const { return last_gap_; }
    int iterations() const { return iterations_; }

private:
    double last_gap_;
    int iterations_;
};

/// Requested problem size exceeds the configured memory or work budget.
class BudgetExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Configuration file missing or failing schema validation.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rmfg
