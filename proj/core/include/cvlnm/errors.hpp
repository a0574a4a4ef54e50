#pragma once

#include <stdexcept>
#include <string>

namespace cvlnm {

/// Shape or dimension disagreement between operands.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration detected at construction time (e.g. head count
/// not dividing the feature dimension).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// File format or I/O failure.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values where finite ones are required (NaN gradients, NaN loss).
class NumericsError : public std::runtime_error {
 public:
  explicit NumericsError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cvlnm
