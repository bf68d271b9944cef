#pragma once

#include <stdexcept>
#include <string>

namespace convexvolt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or text.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Network violates the radial-tree invariants.
class TopologyError : public Error {
 public:
  using Error::Error;
};

/// Vector or matrix dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Numerical process left its valid domain (v <= 0, non-finite loss, ...).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Model file is missing a field or carries an unsupported version.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Caller passed an argument outside the documented domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace convexvolt
