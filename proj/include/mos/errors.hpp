#pragma once

#include <stdexcept>
#include <string>

namespace mos {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not line up (matmul inner dims, concat widths, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid static configuration (head count, step size, odd encoding width).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad runtime input: out-of-range labels, wrong frame size, malformed edits.
class InputError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf showed up where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Checkpoint decoding failures; the message names the offending field.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Filesystem problems; the message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mos
