#pragma once

#include <stdexcept>
#include <string>

namespace ktb {

// Invalid or inconsistent configuration (bad flag, bad value, unsupported backbone).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or malformed input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure during computation, e.g. a diverging loss.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised on any attempt to modify parameters that have been frozen.
class FrozenParameterError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace ktb
