#pragma once

#include <stdexcept>
#include <string>

namespace abe {

/// Bad flags, unknown registry keys, or malformed configuration.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A check's stated precondition does not hold (e.g. a model pair that is not functionally equal).
class PreconditionError : public UsageError {
 public:
  using UsageError::UsageError;
};

/// Malformed or inconsistent input data (files, datasets, shapes supplied by the caller).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

/// NaN/Inf encountered, divergence during training, or a non-finite update step.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Autodiff misuse: backward on a non-scalar, backward twice, missing gradient.
class GradientError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace abe
