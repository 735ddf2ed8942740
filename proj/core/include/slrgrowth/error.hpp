#pragma once

#include <stdexcept>
#include <string>

namespace slrgrowth {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input file does not match the declared column layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class DuplicateKeyError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Rank-deficient design or singular system.
class SingularityError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace slrgrowth
