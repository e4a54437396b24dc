#pragma once

#include <stdexcept>
#include <string>

namespace rcn {

// Raised when tensor shapes or extents are inconsistent with an operation.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised for invalid user-supplied arguments (bad enum string, k < 1, ...).
struct ArgumentError : std::runtime_error {
  explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a file exists but its contents are not understood.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a file cannot be opened, read or written.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rcn
