#pragma once

#include <stdexcept>
#include <string>

namespace transact {

/// Base of every error the toolkit throws. The CLI maps each subclass to a
/// distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration or argument violates a domain invariant. The message
/// names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File missing or unreadable.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Container file is malformed: bad magic, version, shapes or truncation.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid runtime input such as an out-of-range token.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or an unsolvable linear system.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace transact
