#pragma once

#include <stdexcept>
#include <string>

namespace histcode {

/// Base class for all histcode failures.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class MissingUpstreamArtifact : public Error {
 public:
  using Error::Error;
};

// Numerical / contract failures.
class NonFinite : public Error {
 public:
  using Error::Error;
};
class NumericalDegeneracy : public Error {
 public:
  using Error::Error;
};
class DegenerateHistogram : public Error {
 public:
  using Error::Error;
};
class SchemaMismatch : public Error {
 public:
  using Error::Error;
};
class InsufficientTiles : public Error {
 public:
  using Error::Error;
};
class BagTooSmall : public Error {
 public:
  using Error::Error;
};
class DimensionMismatch : public Error {
 public:
  using Error::Error;
};
class SingleClassSplit : public Error {
 public:
  using Error::Error;
};
class SingleClass : public Error {
 public:
  using Error::Error;
};
class ConstantVector : public Error {
 public:
  using Error::Error;
};
class TooFewPatients : public Error {
 public:
  using Error::Error;
};
class TooFewValues : public Error {
 public:
  using Error::Error;
};
class CoordOutOfBounds : public Error {
 public:
  using Error::Error;
};

}  // namespace histcode
