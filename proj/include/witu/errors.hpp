#pragma once

#include <stdexcept>
#include <string>

namespace witu {

// Tensor extents do not line up with what an op expects.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameters or an inconsistent configuration.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Input violates an op precondition that the caller can fix (e.g. padding).
struct PreconditionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Object used out of order (backward before forward, step without grads).
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss or gradient).
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace witu
