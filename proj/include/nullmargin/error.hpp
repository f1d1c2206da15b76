#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nullmargin {

/// Coarse failure category. The CLI maps each to a process exit code.
enum class ErrorKind { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class DimensionMismatch : public DataError {
 public:
  DimensionMismatch(std::size_t expected, std::size_t got, const std::string& context)
      : DataError(context + ": expected dimension " + std::to_string(expected) + ", got " +
                  std::to_string(got)),
        expected_(expected),
        got_(got) {}
  std::size_t expected() const noexcept { return expected_; }
  std::size_t got() const noexcept { return got_; }

 private:
  std::size_t expected_;
  std::size_t got_;
};

/// Malformed or truncated file, bad magic, unsupported version.
class FormatError : public DataError {
 public:
  explicit FormatError(const std::string& what) : DataError(what) {}
};

/// Fewer null projecting directions than classes-1: the data is not in general position.
class DegenerateDataError : public DataError {
 public:
  DegenerateDataError(std::size_t found, std::size_t expected)
      : DataError("degenerate data: found " + std::to_string(found) +
                  " null projecting directions, expected " + std::to_string(expected)),
        found_(found),
        expected_(expected) {}
  std::size_t found() const noexcept { return found_; }
  std::size_t expected() const noexcept { return expected_; }

 private:
  std::size_t found_;
  std::size_t expected_;
};

class InsufficientSamplesError : public DataError {
 public:
  explicit InsufficientSamplesError(const std::string& what) : DataError(what) {}
};

/// 0/0 ratio, e.g. a Fisher value along a direction with no scatter at all.
class UndefinedValueError : public NumericalError {
 public:
  explicit UndefinedValueError(const std::string& what) : NumericalError(what) {}
};

/// The margin eigenproblem produced no positive eigenvalue.
class EmptyModelError : public NumericalError {
 public:
  explicit EmptyModelError(const std::string& what) : NumericalError(what) {}
};

/// A probe identity has no counterpart in the gallery.
class ProtocolError : public DataError {
 public:
  explicit ProtocolError(const std::string& what) : DataError(what) {}
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
  }
  return 1;
}

}  // namespace nullmargin
