#pragma once

#include <stdexcept>
#include <string>

namespace sslfuse {

// Base class for every error raised by the library. The CLI maps UsageError
// to exit code 1 and everything else to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class StorageError : public Error {
 public:
  using Error::Error;
};

// Raised when a label sequence cannot be aligned to the available frames.
class LengthError : public Error {
 public:
  using Error::Error;
};

}  // namespace sslfuse
