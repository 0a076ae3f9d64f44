#pragma once

#include <stdexcept>
#include <string>

namespace nfr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not line up (wrong input length, stale trace, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its domain (non-positive weight, bad label, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace nfr
