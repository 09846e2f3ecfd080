// Exception taxonomy shared by every module. The CLI maps these onto its
// exit codes: usage -> 2, validation/contract/config/io -> 3, numeric -> 4.
#pragma once

#include <stdexcept>
#include <string>

namespace flowpref {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad input data or parameter values (ranges, malformed files, ...).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller broke an API precondition.
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands; message names both extents.
struct DimensionError : ContractError {
  using ContractError::ContractError;
};

// Argument outside its mathematical domain (t outside [0,1], tau <= 0, ...).
struct DomainError : ValidationError {
  using ValidationError::ValidationError;
};

struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values, divergence, degenerate numerical states.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateEmbeddingError : NumericError {
  using NumericError::NumericError;
};

struct TrainingError : NumericError {
  using NumericError::NumericError;
};

struct SamplingError : NumericError {
  using NumericError::NumericError;
};

}  // namespace flowpref
