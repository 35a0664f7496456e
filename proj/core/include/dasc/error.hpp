#pragma once

#include <stdexcept>
#include <string>

namespace dasc {

// Base for everything thrown by the library. The CLI maps the subtypes to
// exit codes: ConfigError -> 2, DataError -> 3, NumericError -> 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shape / broadcasting violations.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Out-of-range token ids, targets, lookups.
class IndexError : public Error {
public:
    using Error::Error;
};

// Contract violations on stateful objects (e.g. backward on a spent tape).
class StateError : public Error {
public:
    using Error::Error;
};

// Bad user-supplied configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed files, schema/vocab mismatches, corrupt checkpoints.
class DataError : public Error {
public:
    using Error::Error;
};

// Training divergence (non-finite loss).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace dasc
