#pragma once

#include <stdexcept>
#include <string>

namespace dab {

// Base for everything thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; message names both shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Input outside an op's domain (log of non-positive values, NaN results, ...).
struct DomainError : Error {
  using Error::Error;
};

// Bad run configuration (invalid flag combination, malformed config file).
struct ConfigError : Error {
  using Error::Error;
};

// Malformed external data (IDX files, checkpoints).
struct ParseError : Error {
  using Error::Error;
};

}  // namespace dab
