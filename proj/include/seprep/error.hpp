#pragma once

#include <stdexcept>
#include <string>

namespace seprep {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree with the operation or the model descriptor.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf appeared in a result.
class NumericError : public Error {
 public:
  using Error::Error;
};

// The caller violated an operation precondition (e.g. fusing a fused model).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace seprep
