#pragma once

#include <stdexcept>
#include <string>

namespace repro {

// Base of every error raised by the library. The CLI maps the subclasses onto
// exit codes (numeric -> 2, io -> 3, config/schema -> 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class PretrainingFailed : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace repro
