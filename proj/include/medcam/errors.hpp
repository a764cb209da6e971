#pragma once

#include <stdexcept>
#include <string>

namespace medcam {

// Error taxonomy shared across the library. The CLI maps these onto process
// exit codes (see tools/).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape or arity mismatch.
struct DimensionError : Error {
  using Error::Error;
};

// API misuse: violated precondition that is not a shape problem.
struct ContractError : Error {
  using Error::Error;
};

// NaN or Inf reached an operation input.
struct NumericError : Error {
  using Error::Error;
};

// Malformed or truncated file content.
struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Unusable dataset (empty class, empty pool, ...).
struct DataError : Error {
  using Error::Error;
};

// Invalid user-supplied parameter value.
struct ParameterError : Error {
  using Error::Error;
};

}  // namespace medcam
