#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace avb {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `row` is the 1-based line number in the file
/// (0 when the problem is not tied to a line).
class FormatError : public Error {
 public:
  FormatError(const std::string& path, std::size_t row, const std::string& what)
      : Error(path + (row ? ":" + std::to_string(row) : std::string()) + ": " + what),
        row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// A non-finite value appeared in a forward pass, loss or parameter update.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace avb
