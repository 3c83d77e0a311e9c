#pragma once

#include <stdexcept>
#include <string>

namespace xalign {

// Base of every error thrown by the toolkit. The CLI maps ConfigError to a
// usage failure and everything else to a data failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class DegenerateConceptError : public DegenerateInputError {
 public:
  using DegenerateInputError::DegenerateInputError;
};

class SingularSystemError : public Error {
 public:
  using Error::Error;
};

}  // namespace xalign
