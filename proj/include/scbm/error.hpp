#pragma once

#include <stdexcept>
#include <string>

namespace scbm {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments or data that violate a documented precondition.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Configuration value out of range. The message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A fit could not be performed on the supplied data (e.g. single-arm data).
class FitError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver stopped before reaching its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// The requested operation is not defined for this model variant.
class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

/// CSV ingestion failure. `row` is 1-based over data rows (header excluded),
/// zero when the error is not tied to a row.
class CsvError : public Error {
 public:
  enum class Kind { empty_file, missing_column, non_numeric, non_binary_treatment, ragged_row, io };

  CsvError(Kind kind, const std::string& what, std::size_t row = 0, std::string column = {})
      : Error(what), kind_(kind), row_(row), column_(std::move(column)) {}
  Kind kind() const noexcept { return kind_; }
  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  Kind kind_;
  std::size_t row_;
  std::string column_;
};

/// Model archive does not follow the expected JSON schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Model archive was written by an incompatible major format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

}  // namespace scbm
