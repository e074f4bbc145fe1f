#pragma once

#include <stdexcept>
#include <string>

namespace ace {

// Every library failure derives from Error so the CLI can map it to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (non-finite input,
// out-of-range head/label).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or malformed input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite intermediate value produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Training diverged.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, int epoch)
      : NumericError(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}

  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Selective risk requested at zero coverage.
class UndefinedRiskError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace ace
