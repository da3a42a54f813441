#pragma once

#include <stdexcept>
#include <string>

namespace adaptlm {

// Base of every exception thrown by the library. The CLI maps subclasses to
// exit codes: ConfigError -> 2, DataError/FormatError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition (bad argument, misuse of an API).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Tensor shapes or extents that do not agree.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// Non-finite value produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Input data that cannot be used (bad rows, labels, empty corpora).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Checkpoint payload does not match its manifest.
class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Invalid configuration value; message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// "path:line: message"
std::string located(const std::string& path, std::size_t line, const std::string& message);

}  // namespace adaptlm
