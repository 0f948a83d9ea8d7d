#pragma once

#include <stdexcept>
#include <string>

namespace dynbsde {

/// Base of all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A size or enumeration cap was exceeded.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the operation's domain (level mismatch, bad parameter).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid numerical configuration (CFL, grids).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Problem failed a validation probe (Lipschitz, linearity).
class ProblemValidationError : public Error {
 public:
  using Error::Error;
};

/// Declared structure (monotonicity, shared generator) failed a probe.
class StructureError : public Error {
 public:
  using Error::Error;
};

/// A set that must be non-empty came out empty.
class EmptySetError : public Error {
 public:
  using Error::Error;
};

/// Operation not available in the tree's mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

/// Caller-supplied path derivatives failed the functional Ito probe.
class InvalidCylinderError : public Error {
 public:
  using Error::Error;
};

}  // namespace dynbsde
