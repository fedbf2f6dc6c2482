#pragma once

#include <stdexcept>
#include <string>

namespace ead {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A tensor extent does not match what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be read, written or decoded.
class IoError : public Error {
 public:
  using Error::Error;
};

// Bytes on disk do not follow the expected container layout.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

// A loss or score became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ead
