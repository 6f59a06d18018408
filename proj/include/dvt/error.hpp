#pragma once

#include <stdexcept>
#include <string>

namespace dvt {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not conform for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced, or an argument outside a function's numeric domain.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, configuration keys or arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input data (CSV, IDX, checkpoints, manifests).
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dvt
