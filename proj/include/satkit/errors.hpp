#pragma once

#include <stdexcept>
#include <string>

namespace satkit {

// Base for all satkit errors. Subclasses map onto CLI exit codes:
// ConfigError -> 1, MissingArtifactError -> 2, NumericalError -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration, bad arguments, contract violations at call sites.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Tensor/array shape mismatches.
class ShapeError : public ConfigError {
 public:
  explicit ShapeError(const std::string& msg) : ConfigError(msg) {}
};

// A referenced artifact (file, store entry, checkpoint) is absent or corrupt.
class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(const std::string& msg) : Error(msg) {}
};

// Non-finite values or other numerical breakdown.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& msg) : Error(msg) {}
};

}  // namespace satkit
