#pragma once

#include <stdexcept>
#include <string>

namespace dudrive {

/// Non-finite or out-of-domain scalar arguments.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Tensor or image with the wrong shape for the operation.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Unreadable, malformed or empty dataset.
struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A caller broke an API contract, e.g. mutating a frozen generator.
struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// Training hit a non-finite loss. The message carries the step and loss values.
struct TrainingAborted : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dudrive
