#pragma once

#include <stdexcept>
#include <string>

namespace aqmix {

// Raised for invalid configurations, dimension mismatches on inputs that come
// from users (config files, task suites, checkpoints).
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Raised when training produces a non-finite loss or gradient.
class TrainingFault : public std::runtime_error {
 public:
  explicit TrainingFault(const std::string& what) : std::runtime_error(what) {}
};

// Internal contract violations (shape mismatch between tensors built by the
// library itself).
class ShapeError : public std::logic_error {
 public:
  explicit ShapeError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace aqmix
