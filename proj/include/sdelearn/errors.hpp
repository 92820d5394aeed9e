#ifndef SDELEARN_ERRORS_HPP
#define SDELEARN_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdelearn {

/// Invalid argument to a sampler, density or model constructor.
class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the support of a density.
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Linear-algebra failure (Cholesky after jitter, singular covariance).
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A simulated path or a Markov chain left the finite region.
class DivergenceError : public NumericError {
public:
  DivergenceError(const std::string &what, std::size_t step)
      : NumericError(what + " (step " + std::to_string(step) + ")"),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

/// Stationary-density exponent is not representable.
class OverflowError : public NumericError {
public:
  using NumericError::NumericError;
};

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace sdelearn

#endif // SDELEARN_ERRORS_HPP
