#pragma once

#include <stdexcept>
#include <string>

namespace jacreg {

/// Base class of every error thrown by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& message) : Error("dimension_mismatch", message) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& message) : Error("invalid_parameter", message) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& message) : Error("non_finite", message) {}
};

class UnsupportedActivation : public Error {
 public:
  explicit UnsupportedActivation(const std::string& message)
      : Error("unsupported_activation", message) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& message, std::size_t epoch)
      : Error("divergence", message), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

class IoError : public Error {
 public:
  IoError(const std::string& message, std::string path)
      : Error("io", message), path_(std::move(path)) {}
  IoError(std::string kind, const std::string& message, std::string path)
      : Error(std::move(kind), message), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// IDX format failures, one type per failure mode.
class BadMagicError : public IoError {
 public:
  BadMagicError(const std::string& message, std::string path)
      : IoError("bad_magic", message, std::move(path)) {}
};

class TruncatedFileError : public IoError {
 public:
  TruncatedFileError(const std::string& message, std::string path)
      : IoError("truncated_file", message, std::move(path)) {}
};

class CountMismatchError : public IoError {
 public:
  CountMismatchError(const std::string& message, std::string path)
      : IoError("count_mismatch", message, std::move(path)) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error("config", message) {}
};

}  // namespace jacreg
