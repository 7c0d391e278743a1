#pragma once

#include <stdexcept>
#include <string>

namespace metadro {

/// Base for every error raised by the library. The CLI maps subclasses onto
/// exit codes, so new error kinds should derive from one of the families below.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration or input validation (exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IngestError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class EpisodeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RankingError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Misuse of the autodiff API (e.g. differentiating a non-scalar output).
class UsageError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numeric failures (exit code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainingAbort : public NumericError {
 public:
  using NumericError::NumericError;
};

// Filesystem failures (exit code 4).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace metadro
