#pragma once

#include <stdexcept>
#include <string>

namespace collapse {

// Base of every error raised by the library. Callers that only care about
// "something went wrong in the lab" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContextLengthError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition (non-scalar backward root, optimizer state
// that does not match the model, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace collapse
