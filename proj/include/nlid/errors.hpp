#pragma once

#include <stdexcept>
#include <string>

namespace nlid {

// Malformed or inconsistent input data (shapes, non-finite values, files).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad option or configuration value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Divergence, singular systems, stalled searches.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nlid
