#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cxr {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for an op. Carries the op name and both shapes.
class ShapeError : public Error {
 public:
  ShapeError(std::string op, Shape lhs, Shape rhs, const std::string& detail = {});

  const std::string& op() const noexcept { return op_; }
  const Shape& lhs() const noexcept { return lhs_; }
  const Shape& rhs() const noexcept { return rhs_; }

 private:
  std::string op_;
  Shape lhs_;
  Shape rhs_;
};

// Input is outside the domain where an op is well defined (zero-norm rows,
// non-normalized embeddings, empty batches).
class DegenerateInputError : public Error {
 public:
  DegenerateInputError(std::string op, const std::string& detail);
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& detail);
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// A file exists but its contents are malformed. `record` names the offending
// dataset id or checkpoint parameter.
class FormatError : public Error {
 public:
  FormatError(std::string record, const std::string& detail);
  const std::string& record() const noexcept { return record_; }

 private:
  std::string record_;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace cxr
