#pragma once

#include <stdexcept>
#include <string>

namespace mtse {

// Error taxonomy shared by the library and the CLI exit-code contract:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent files, bad sample indices, empty splits.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf detected where all values must be finite.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mtse
