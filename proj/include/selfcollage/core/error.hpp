#pragma once

#include <stdexcept>
#include <string>

namespace selfcollage {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments to an operation (dimension mismatch, out-of-range, ...).
class InvalidInput : public Error {
public:
    using Error::Error;
};

// Filesystem / decode / serialization failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Dataset-level problems (empty directory, schema violation, too small).
class DataError : public Error {
public:
    using Error::Error;
};

// Non-finite values where finite ones are required (e.g. diverged loss).
class NumericError : public Error {
public:
    using Error::Error;
};

// Malformed run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Rank correlation is undefined (a side is constant).
class UndefinedCorrelation : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

}  // namespace selfcollage
