#pragma once

#include <stdexcept>
#include <string>

namespace zarm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or contract violation between tensors/operations.
struct DimensionError : Error {
  using Error::Error;
};

// Bad or inconsistent input data (corpus, examples, empty support).
struct DataError : Error {
  using Error::Error;
};

// NaN/Inf detected, or a numerical abort during training.
struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace zarm
