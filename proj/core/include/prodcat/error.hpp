#pragma once

#include <stdexcept>
#include <string>

namespace prodcat {

/// Base class for failures raised by the library (as opposed to caller
/// precondition violations, which use std::invalid_argument).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A configuration or model manifest is inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor operands disagree on shape.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training hit a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace prodcat
