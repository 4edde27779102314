#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pepnet {

/// Invalid input data or a failed validation (bad file, shape mismatch,
/// degenerate data). The CLI maps these to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed container bytes; carries the byte offset where parsing failed.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
        detail_(what),
        offset_(offset) {}

  const std::string& detail() const noexcept { return detail_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string detail_;
  std::uint64_t offset_;
};

/// Bad arguments or configuration. The CLI maps these to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace pepnet
