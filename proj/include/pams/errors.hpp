#pragma once

#include <stdexcept>
#include <string>

namespace pams {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or channel-count mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Out-of-range argument or invalid configuration.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong lifecycle state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Broken internal invariant; never expected to fire.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace pams
