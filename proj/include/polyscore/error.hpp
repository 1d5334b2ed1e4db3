#pragma once

#include <stdexcept>
#include <string>

namespace polyscore {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN / non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input files (dataset, vocabulary, checkpoint, cache).
class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A derived artifact (candidate cache) no longer matches its model.
class StaleArtifactError : public Error {
 public:
  using Error::Error;
};

}  // namespace polyscore
