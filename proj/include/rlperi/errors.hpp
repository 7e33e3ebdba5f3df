#pragma once

#include <stdexcept>
#include <string>

namespace rlperi {

/// Argument outside the mathematical domain of an operation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Malformed input file. The message names the offending row and column.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operation called in a state that does not permit it.
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Floating point breakdown (underflow to zero, non-finite values).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rlperi
