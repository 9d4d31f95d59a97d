#pragma once

#include <stdexcept>
#include <string>

namespace rcbf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scalar parameter is outside its admissible range (beta, gamma, eps, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Vector / matrix sizes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A risk envelope is empty, unbounded, or leaves the probability simplex.
class EnvelopeError : public Error {
 public:
  using Error::Error;
};

/// Malformed scenario tree or other composite structure.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A user-supplied function fails a required property (e.g. alpha(r) < r).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A call-site precondition does not hold (e.g. control outside its bounds).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Enumeration would exceed the configured work budget.
class BudgetError : public Error {
 public:
  using Error::Error;
};

/// The requested system / barrier / risk combination has no solver path.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// An experiment config is malformed: bad JSON, unknown key, wrong type.
/// `field` is the dotted path of the offending entry, empty for parse errors.
class SchemaError : public Error {
 public:
  SchemaError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace rcbf
