#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace niff {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A differentiable computation produced NaN or infinity.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Vector lengths or parameter layouts do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A query fell outside the support of a sampled signal.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (zero mass, empty sample sets, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// The dependent basis function vanishes at t = 0.
class SingularBasisError : public DomainError {
 public:
  explicit SingularBasisError(std::size_t index)
      : DomainError("dependent basis function " + std::to_string(index) + " vanishes at t = 0") {}
};

/// An integrator, optimizer or sampler left the finite numbers.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace niff
