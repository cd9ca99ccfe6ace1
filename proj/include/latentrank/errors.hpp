#pragma once

#include <stdexcept>
#include <string>

namespace latentrank {

// Error taxonomy. Every failure the library raises derives from one of
// these; the CLI maps each class to a documented exit code.

// Invalid or inconsistent configuration (bad dimensions, zero topics, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or referentially broken input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or numerically impossible requests.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched or inconsistent runtime state (trace/params disagreement, ...).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that is structurally valid but degenerate (zero vector, empty user).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sampler cannot satisfy a draw request (empty candidate pool).
class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace latentrank
