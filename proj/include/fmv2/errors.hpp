#pragma once

#include <stdexcept>
#include <string>

namespace fmv2 {

// Shape or axis disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A precondition of an operation was violated (non-scalar backward, bad label, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fmv2
