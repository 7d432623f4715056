#pragma once

#include <stdexcept>
#include <string>

namespace bitslab {

/// Malformed configuration or input file; CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical routine failed (non-convergence, singular system, non-PD matrix); CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bitslab
