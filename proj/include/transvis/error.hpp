#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace transvis {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data violates a documented invariant. Carries the offending
/// node id or row index when one exists.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what,
                           std::optional<std::size_t> index = std::nullopt)
      : Error(what), index_(index) {}

  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  std::optional<std::size_t> index_;
};

/// A configuration value is out of range or inconsistent with the data.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed. `line()` is 1-based; 0 means the error is
/// not tied to a line (binary formats, truncated files).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Numerical failure during training (non-finite loss and the like).
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t batch)
      : Error(what), batch_(batch) {}

  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t batch_;
};

}  // namespace transvis
