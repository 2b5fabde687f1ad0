#pragma once

#include <stdexcept>
#include <string>

namespace maskclu {

// Shapes of operands do not line up (matmul inner dims, broadcast, concat).
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Value outside the mathematical domain of an operation (log of x <= 0, exp overflow,
// zero-norm cosine, non-finite inputs).
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

// Hyperparameter outside its admissible range (temperature, mask ratio, k).
class ParameterError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

// Requested more elements than exist (FPS n > H, KNN k > H).
class SizeError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

// Caller broke an API contract (non-scalar backward root, empty set, single-class probe).
class ContractError : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

// Inconsistent configuration: unknown keys, layer widths, checkpoint mismatch.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed file contents (XYZ lines, checkpoint bytes, config JSON).
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// A training step produced a non-finite value.
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace maskclu
