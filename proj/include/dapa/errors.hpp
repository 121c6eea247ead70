#pragma once

#include <stdexcept>
#include <string>

namespace dapa {

/// Base for every error raised by the library. `exit_code()` follows the CLI
/// convention: 1 usage/config, 2 data, 3 numeric.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Malformed file contents (bad magic, truncated payload, ragged CSV).
class FormatError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Corpus-level validation failure (missing file, row mismatch, bad label).
class IngestionError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class CheckpointError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// NaN/Inf in a loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace dapa
