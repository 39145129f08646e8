#pragma once

#include <stdexcept>
#include <string>

namespace a2n {

// Shape/dimension disagreement between operands.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// File system / codec failures. Message carries the offending path.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad magic, failed CRC, truncation, or config mismatch in a checkpoint.
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unknown keys, invalid values, or unusable paths in a run config.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf where a finite value is required.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace a2n
