#pragma once

#include <stdexcept>
#include <string>

namespace varmap {

/// Base class for all toolkit errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Structural problems: mismatched grids, incompatible tensor shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// File-format problems: bad magic, truncated payload, malformed header.
struct ParseError : Error {
    using Error::Error;
};

/// Invalid or inconsistent configuration.
struct ConfigError : Error {
    using Error::Error;
};

/// Missing or inconsistent data artifacts (absent modality, hash mismatch).
struct DataError : Error {
    using Error::Error;
};

/// Non-finite value encountered during iterative work.
struct DivergenceError : Error {
    int iteration;
    DivergenceError(const std::string& msg, int iter) : Error(msg), iteration(iter) {}
};

} // namespace varmap
