#pragma once

#include <stdexcept>
#include <string>

namespace lord {

// Input or configuration rejected before any work was done. The CLI maps this
// to exit code 1; everything else that escapes is a runtime failure (exit 2).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CorruptCheckpoint : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

class VersionMismatch : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

// Raised when a training loop produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace lord
