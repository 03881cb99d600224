#pragma once

#include <stdexcept>
#include <string>

namespace ocogan {

// Exit codes for the command-line tool. Stable contract for scripting.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 1,
  kData = 2,
  kNumerical = 3,
  kIo = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode exit_code() const = 0;
};

// Invalid configuration or usage.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kConfig; }
};

// Malformed input data (bad labels, wrong shapes, unreadable images).
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kData; }
};

// Non-finite loss or metric.
class NumericalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kNumerical; }
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kIo; }
};

// Checkpoint failed its checksum or is truncated.
class IntegrityError : public IoError {
 public:
  using IoError::IoError;
};

// A stored tensor does not match the shape the current configuration expects.
class ShapeMismatchError : public ConfigError {
 public:
  ShapeMismatchError(std::string parameter, const std::string& what)
      : ConfigError(what), parameter_(std::move(parameter)) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

// Broken internal contract (mismatched pyramid depth, missing gradient).
class InternalError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kData; }
};

}  // namespace ocogan
