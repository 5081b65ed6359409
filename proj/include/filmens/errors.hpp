#pragma once

#include <stdexcept>
#include <string>

namespace filmens {

/// Dimension or buffer-shape mismatch (names both shapes in the message).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid argument value, label out of range, or broken call contract.
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad experiment configuration (file, field, or CLI level).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed external file: dataset binary, sequence text, checkpoint.
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace filmens
