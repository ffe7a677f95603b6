#pragma once

#include <stdexcept>
#include <string>

namespace tmcda {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input structure: missing columns, unknown categories, bad shapes.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// A value violates a documented domain constraint (negative counts, hour out of range, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Configuration or argument validation failure.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Numerical failure inside a fitting stage (non-PSD matrix, collapsed component, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Wraps a failure raised by one pipeline stage, tagged with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace tmcda
