#pragma once

#include <stdexcept>
#include <string>

namespace powq {

// Base class for everything thrown by the library. Subclasses map onto the
// CLI exit-code categories: data errors (parse, validation, structure) and
// numeric errors (domain, dimension, solver, range, training).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StructureError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  SolverError(const std::string &msg, double at) : Error(msg), at_(at) {}
  double at() const noexcept { return at_; }

 private:
  double at_ = 0.0;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string &msg, std::size_t byte_offset)
      : Error(msg), byte_offset_(byte_offset) {}
  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_ = 0;
};

class ValidationError : public Error {
 public:
  ValidationError(const std::string &msg, std::string field)
      : Error(msg), field_(std::move(field)) {}
  const std::string &field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace powq
