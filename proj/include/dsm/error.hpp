#pragma once

#include <stdexcept>
#include <string>

namespace dsm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: malformed data, mismatched extents, out-of-range arguments,
/// unreadable files. The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ExtentMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NonBinaryMask : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NonFiniteValue : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OutOfRange : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class CheckpointError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Failure while running an otherwise valid job (diverged training, I/O errors
/// while writing outputs). The CLI maps these to exit code 2.
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace dsm
