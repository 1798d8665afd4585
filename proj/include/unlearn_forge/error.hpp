#pragma once

#include <stdexcept>
#include <string>

namespace uf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user-supplied parameters (counts, variances, seeds out of range).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dimension mismatch between vectors, matrices, datasets and models.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Requested mode is not available for this combination of inputs.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// A matrix that must be symmetric positive definite is not.
class FactorizationError : public Error {
 public:
  using Error::Error;
};

// Removing data would leave a posterior precision that is not PD.
class DowndateError : public Error {
 public:
  using Error::Error;
};

// Optimizer produced a non-finite objective or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Two arguments that must agree (e.g. lambda and 1/beta) do not.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace uf
