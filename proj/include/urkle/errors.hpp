// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace urkle {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a shape or size contract (mismatched dimensions, lengths).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// An argument is outside its documented domain (count = 0, negative KL, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Data handed to a numeric routine is not finite.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidLabel : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// A configuration value (or combination of values) is unusable.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::optional<std::size_t> line = std::nullopt)
      : Error(line ? "line " + std::to_string(*line) + ": " + what : what), line_(line) {}

  std::optional<std::size_t> line() const { return line_; }

 private:
  std::optional<std::size_t> line_;
};

/// Non-finite values appeared during an iterative computation.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, std::optional<std::size_t> step = std::nullopt)
      : Error(step ? what + " (step " + std::to_string(*step) + ")" : what), step_(step) {}

  std::optional<std::size_t> step() const { return step_; }

 private:
  std::optional<std::size_t> step_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated binary input; carries the byte offset where decoding failed.
class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : IoError(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Wrong magic number or container layout.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

/// Two inputs that must agree (e.g. image and label counts) do not.
class ConsistencyError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace urkle
