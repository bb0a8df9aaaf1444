#pragma once

#include <stdexcept>
#include <string>

namespace retrofit {

// Precondition violated by the caller (bad sizes, out-of-range knobs).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Data-dependent failure: non-finite values, non-positive depth, ...
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric or loss was requested over zero valid elements.
class EmptyEvaluation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Two structures that must agree (selection vs refined sites) do not.
class Inconsistency : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string pixel_name(int row, int col) {
  return "(" + std::to_string(row) + ", " + std::to_string(col) + ")";
}

}  // namespace retrofit
