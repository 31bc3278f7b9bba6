#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace lmb {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or value outside an operation's domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// A simulated state became non-finite.
class SimulationBlowup : public Error {
 public:
  SimulationBlowup(std::size_t step, const std::string& what)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Score training diverged.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t iteration, const std::string& what)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Likelihood estimation failed (e.g. every importance weight is -inf).
class EstimationError : public Error {
 public:
  explicit EstimationError(const std::string& what, std::optional<double> variance = std::nullopt)
      : Error(variance ? what + " (v = " + std::to_string(*variance) + ")" : what),
        variance_(variance) {}
  std::optional<double> variance() const noexcept { return variance_; }

 private:
  std::optional<double> variance_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace lmb
