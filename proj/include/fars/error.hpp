#pragma once

#include <stdexcept>
#include <string>

namespace fars {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: unreadable files, malformed CSV, out-of-domain parameters,
/// inconsistent block or factor structures.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A computation could not be carried out: rank deficiency, singular
/// systems, degenerate nodes, quadrature or bracketing failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace fars
