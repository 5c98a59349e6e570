#pragma once

#include <stdexcept>
#include <string>

namespace occ {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible extents or a violated shape precondition.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A checkpoint written by one training task was loaded for the other.
class TaskMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace occ
