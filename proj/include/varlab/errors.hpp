#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace varlab {

// A caller broke the documented precondition of an operation.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values showed up in a loss or a gradient.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The requested operation needs a model feature that is switched off.
class UnsupportedConfiguration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing, unreadable or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; offset is the byte position where parsing stopped.
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

inline void expects(bool ok, std::string_view what) {
  if (!ok) throw ContractViolation(std::string(what));
}

}  // namespace varlab
