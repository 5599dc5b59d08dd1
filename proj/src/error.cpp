#include "cxr/error.hpp"

namespace cxr {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

ShapeError::ShapeError(std::string op, Shape lhs, Shape rhs, const std::string& detail)
    : Error(op + ": shape mismatch " + to_string(lhs) + " vs " + to_string(rhs) +
            (detail.empty() ? "" : " (" + detail + ")")),
      op_(std::move(op)),
      lhs_(std::move(lhs)),
      rhs_(std::move(rhs)) {}

DegenerateInputError::DegenerateInputError(std::string op, const std::string& detail)
    : Error(op + ": degenerate input: " + detail), op_(std::move(op)) {}

IoError::IoError(std::string path, const std::string& detail)
    : Error(path + ": " + detail), path_(std::move(path)) {}

FormatError::FormatError(std::string record, const std::string& detail)
    : Error("corrupt record '" + record + "': " + detail), record_(std::move(record)) {}

}  // namespace cxr
