#pragma once

#include <stdexcept>
#include <string>

namespace fcl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
    using Error::Error;
};

struct IndexError : Error {
    using Error::Error;
};

// Violated precondition of an operation (empty input, missing grad, ...).
struct ContractError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct AdapterCompatibilityError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Reports produced on different benchmark suites cannot be joined.
struct SuiteMismatchError : Error {
    using Error::Error;
};

}  // namespace fcl
