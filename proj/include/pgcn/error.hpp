#pragma once

#include <stdexcept>
#include <string>

namespace pgcn {

// Base for all library errors. CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or resolution mismatch; message names the offending shapes.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value or combination.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

// API misuse (broken precondition).
struct ContractError : Error {
    using Error::Error;
};

// Dataset directory or file layout problems.
struct IngestionError : Error {
    using Error::Error;
};

// Metric is undefined for the given inputs (e.g. single-class AUROC).
struct MetricError : Error {
    using Error::Error;
};

// Checkpoint corruption or unsupported version.
struct CheckpointError : Error {
    using Error::Error;
};

// A required file (checkpoint, image) is absent.
struct MissingArtifactError : Error {
    using Error::Error;
};

}  // namespace pgcn
