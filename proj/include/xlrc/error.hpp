#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xlrc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input text (JSON, TSV, hyperparameter tuples).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, std::size_t byte_offset = 0)
      : Error(what), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

// Well-formed input that does not follow the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Data violates a domain invariant (e.g. answer offsets).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A key (example id, parameter name) was not found.
class LookupError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite loss or an invalid stage setup.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace xlrc
