#pragma once

#include <stdexcept>
#include <string>

namespace corisk {

// Root of every error raised by the library. Each subclass corresponds to one
// failure category so callers (and the CLI exit-code table) can dispatch on it.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class EncodingError : public Error {
 public:
  using Error::Error;
};

class ImputationError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class FittingError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

// Bundle file unreadable, wrong format tag, or unsupported version.
class BundleError : public Error {
 public:
  using Error::Error;
};

// Input columns do not match the feature schema a bundle was trained on.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace corisk
