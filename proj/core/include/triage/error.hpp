#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace triage {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

/// A value or record violated a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

/// Inconsistent or unusable configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

/// One offending item inside a dataset validation report.
struct Violation {
  enum class Kind { DuplicateId, LogitArity, NonFiniteLogit, UnknownLabel, EmptyId };
  Kind kind;
  std::string instance_id;
  std::string message;
};

const char* to_string(Violation::Kind kind) noexcept;

/// Raised by validate_dataset; carries every violation, not just the first.
class DatasetError : public ValidationError {
 public:
  explicit DatasetError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const noexcept { return violations_; }
  const char* kind() const noexcept override { return "dataset"; }

 private:
  std::vector<Violation> violations_;
};

}  // namespace triage
