#pragma once

#include <stdexcept>
#include <string>

namespace fnat {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Unusable configuration or arguments (CLI exit code 2).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Tensor shape mismatch; message names both shapes.
struct DimError : Error {
  explicit DimError(const std::string& msg) : Error(msg) {}
};

// Token id outside the vocabulary.
struct VocabError : Error {
  explicit VocabError(const std::string& msg) : Error(msg) {}
};

// File read/write failure or malformed on-disk record.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Non-finite value where a finite one is required (CLI exit code 3).
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

// A verification check failed (CLI exit code 1).
struct CheckError : Error {
  explicit CheckError(const std::string& msg) : Error(msg) {}
};

}  // namespace fnat
