#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csg {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public Error {
 public:
  IndexError(const std::string& what, long long index)
      : Error(what), index_(index) {}
  long long index() const { return index_; }

 private:
  long long index_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ConstraintError : public Error {
 public:
  using Error::Error;
};

// Raised by gate projection when column `column` has no positive entry.
class DegenerateColumnError : public Error {
 public:
  explicit DegenerateColumnError(int column)
      : Error("gate column " + std::to_string(column) +
              " has no positive entry; cannot normalize"),
        column_(column) {}
  int column() const { return column_; }

 private:
  int column_;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, int layer)
      : Error(what), layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint blob shorter than its manifest promises, or a version mismatch.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::size_t expected_bytes,
                 std::size_t actual_bytes)
      : Error(what), expected_(expected_bytes), actual_(actual_bytes) {}
  std::size_t expected_bytes() const { return expected_; }
  std::size_t actual_bytes() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

}  // namespace csg
