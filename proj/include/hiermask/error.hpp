#pragma once

#include <stdexcept>
#include <string>

namespace hiermask {

/// Invalid arguments or configuration supplied by the caller.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed, missing or inconsistent data on disk or in memory.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A non-finite value appeared during a numeric computation.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace hiermask
