#pragma once

#include <stdexcept>

namespace nllm {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// NaN/Inf produced by a forward computation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or incompatible file contents.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nllm
