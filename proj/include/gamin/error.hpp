#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gamin {

// Base of every error the toolkit raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or architecture shapes do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A serialized stream or file does not follow its declared layout.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf reached a loss or gradient.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gamin
