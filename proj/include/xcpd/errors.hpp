#pragma once

#include <stdexcept>
#include <string>

namespace xcpd {

// Base class for all library errors. The CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or size mismatch between operands.
struct DimensionError : Error {
    using Error::Error;
};

// Invalid configuration value or inconsistent run setup.
struct ConfigError : Error {
    using Error::Error;
};

// An iterative solver exhausted its budget.
struct ConvergenceError : Error {
    using Error::Error;
};

// API misuse (wrong call order, wrong object kind).
struct UsageError : Error {
    using Error::Error;
};

// Malformed input data (CSV parsing and friends).
struct IngestError : Error {
    using Error::Error;
};

// Filesystem failure.
struct IoError : Error {
    using Error::Error;
};

}  // namespace xcpd
