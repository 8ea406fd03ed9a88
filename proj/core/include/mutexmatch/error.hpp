#pragma once

#include <stdexcept>
#include <string>

namespace mutexmatch {

// Base of every error thrown by the library. The CLI maps each subclass to a
// distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyper-parameter, unknown config key, out-of-range enum value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Shape mismatch between operands or between data and model.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by an operation, or non-finite gradients.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or infeasible data: CSV parse failures, impossible label budgets.
class DataError : public Error {
 public:
  using Error::Error;
};

// Corrupt or unrecognised checkpoint / report files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward() on a non-scalar tensor.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace mutexmatch
