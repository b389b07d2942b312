#pragma once

#include <stdexcept>
#include <string>

namespace progan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the domain of an operation (log of a
/// non-positive number, a probability outside (0,1), an invalid label).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An operation produced NaN or infinity. The trainer treats this as a
/// recoverable divergence and rolls back to its last snapshot.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Second-order differentiation was requested through an operation that
/// only implements a first-order backward.
class UnsupportedDoubleBackward : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace progan
