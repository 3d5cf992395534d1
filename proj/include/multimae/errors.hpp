#pragma once

#include <stdexcept>
#include <string>

namespace multimae {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Caller violated an API precondition (non-scalar loss, missing gradient, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Operation is illegal in the current object state (e.g. second backward).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data is out of its legal range (class index, missing raster, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A file does not follow its binary/text format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A file or directory cannot be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// File written by an unsupported format version.
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Non-finite loss or parameter encountered during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace multimae
