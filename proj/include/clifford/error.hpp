#pragma once

#include <stdexcept>
#include <string>

namespace clifford {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid model/training configuration (unknown variant, bad shift set, indivisible patch size).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Bad input data, e.g. a class label outside [0, num_classes).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A dataset file whose size does not match the record layout.
class CorruptFileError : public DataError {
 public:
  using DataError::DataError;
};

/// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint that cannot be loaded into the requested model.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value produced from finite inputs (debug builds only).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace clifford
