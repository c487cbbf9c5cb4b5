#pragma once

#include <stdexcept>
#include <string>

namespace scm {

/// Bad input: malformed scenario, out-of-range parameter, inadmissible state.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The numerics broke down (NaN, overflow, root finder could not isolate an event).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A sink or source could not be written or read.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace scm
