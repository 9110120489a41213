#pragma once

#include <stdexcept>
#include <string>

namespace ectwin {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input violates an operation's precondition (bad shape, out-of-range
/// parameter, inconsistent arguments).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// The grid is too coarse to represent the pipe wall.
class WallUnresolvedError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

/// A step size lies outside the range for which an iteration is stable.
class StepSizeError : public PreconditionError {
 public:
  StepSizeError(const std::string& what, double bound) : PreconditionError(what), bound_(bound) {}

  /// Exclusive upper bound on the step size.
  double bound() const noexcept { return bound_; }

 private:
  double bound_;
};

/// A configuration or on-disk artifact failed validation.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent file contents.
class FormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A numerical procedure failed (non-convergence, stability bound violated).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Iterative linear solve did not reach its tolerance.
class SolverError : public NumericalError {
 public:
  SolverError(const std::string& what, double residual)
      : NumericalError(what), residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Time step exceeds a stability bound.
class StabilityError : public NumericalError {
 public:
  StabilityError(const std::string& what, double bound)
      : NumericalError(what), bound_(bound) {}

  /// Largest admissible value of the offending parameter.
  double bound() const noexcept { return bound_; }

 private:
  double bound_;
};

}  // namespace ectwin
