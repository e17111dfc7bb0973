#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace visionsim {

enum class ErrorKind { domain, validation, state, io, not_found, parse, unsupported };

const char* to_string(ErrorKind kind) noexcept;

/// Base of every error raised by the library. `kind()` drives the CLI exit
/// code and the machine-readable diagnostics.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error(ErrorKind::domain, message) {}
};

/// Carries the offending identifiers (item ids, scene ids, field names).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& message, std::vector<std::string> details = {})
      : Error(ErrorKind::validation, message), details_(std::move(details)) {}

  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  std::vector<std::string> details_;
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& message) : Error(ErrorKind::state, message) {}
};

/// `written()` is the number of records that reached disk before the failure.
class IoError : public Error {
 public:
  explicit IoError(const std::string& message, std::size_t written = 0)
      : Error(ErrorKind::io, message), written_(written) {}

  std::size_t written() const noexcept { return written_; }

 private:
  std::size_t written_;
};

class NotFoundError : public Error {
 public:
  NotFoundError(const std::string& message, std::string path)
      : Error(ErrorKind::not_found, message), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// `row()` is the 1-based data row (header excluded) where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t row)
      : Error(ErrorKind::parse, message), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

class UnsupportedCapability : public Error {
 public:
  explicit UnsupportedCapability(const std::string& message)
      : Error(ErrorKind::unsupported, message) {}
};

}  // namespace visionsim
