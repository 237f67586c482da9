#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ctcalib {

/// Base class of every error the toolkit throws.
class CalibError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A time query fell outside a spline's valid half-open interval.
class DomainError : public CalibError {
 public:
  DomainError(double t, double begin, double end);

  double time() const { return t_; }
  double begin() const { return begin_; }
  double end() const { return end_; }

 private:
  double t_;
  double begin_;
  double end_;
};

/// Not enough data to determine the requested quantity.
class InsufficientDataError : public CalibError {
 public:
  using CalibError::CalibError;
};

/// The problem has directions that the measurements do not constrain.
class ObservabilityError : public CalibError {
 public:
  ObservabilityError(const std::string& what, std::vector<std::string> directions)
      : CalibError(what), directions_(std::move(directions)) {}

  const std::vector<std::string>& directions() const { return directions_; }

 private:
  std::vector<std::string> directions_;
};

/// Non-finite cost or a solver that ran away.
class DivergenceError : public CalibError {
 public:
  using CalibError::CalibError;
};

/// Scan registration had too few or geometrically degenerate correspondences.
class RegistrationError : public CalibError {
 public:
  using CalibError::CalibError;
};

/// Invalid configuration or input files.
class ValidationError : public CalibError {
 public:
  using CalibError::CalibError;
};

/// Wraps an error with the pipeline stage it came from.
class StageError : public CalibError {
 public:
  StageError(std::string stage, const CalibError& cause, bool numerical)
      : CalibError(stage + ": " + cause.what()), stage_(std::move(stage)), numerical_(numerical) {}

  const std::string& stage() const { return stage_; }
  /// True when the underlying failure is numerical/observability rather than input validation.
  bool numerical() const { return numerical_; }

 private:
  std::string stage_;
  bool numerical_;
};

}  // namespace ctcalib
