#pragma once

#include <stdexcept>
#include <string>

namespace lowrank {

/// Precondition violated by a caller (bad rank, negative threshold, shape mismatch, ...).
struct ArgumentError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// The SVD backend did not converge.
struct FactorizationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file (operator files, PNM images, config, CSV).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool condition, const std::string &message) {
    if (!condition)
        throw ArgumentError(message);
}

} // namespace detail

} // namespace lowrank
