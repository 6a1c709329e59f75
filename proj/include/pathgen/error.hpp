#pragma once

#include <stdexcept>
#include <string>

namespace pathgen {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent shapes or configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

// Malformed, missing or out-of-range data.
class DataError : public Error {
public:
    using Error::Error;
};

// NaN / Inf produced during evaluation or training.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace pathgen
