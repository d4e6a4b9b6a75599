#pragma once

#include <stdexcept>
#include <string>

namespace dhgcn {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor/operation shape mismatch; message names the offending shapes.
struct ShapeError : Error {
    using Error::Error;
};

/// Malformed or inconsistent input data (files, datasets, checkpoints).
struct DataError : Error {
    using Error::Error;
};

/// Invalid configuration value.
struct ConfigError : Error {
    using Error::Error;
};

/// Non-finite values or other numeric failures.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace dhgcn
