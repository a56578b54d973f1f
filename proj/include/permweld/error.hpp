#pragma once

#include <stdexcept>
#include <string>

namespace permweld {

// Process exit codes used by the command line tool.
enum class ExitCode : int {
  ok = 0,
  usage = 2,
  data = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

// Bad arguments: shape mismatches, out-of-range labels, invalid settings.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Wrong magic, version, or layout in a binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Missing, unreadable, truncated, or unwritable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during optimisation.
class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

// Malformed experiment configuration or command line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

}  // namespace permweld
