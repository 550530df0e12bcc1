#pragma once

#include <stdexcept>
#include <string>

namespace mimo {

// Error taxonomy used across the library. The CLI maps these to exit codes:
// UsageError -> 1, ConfigError/InputError -> 2, everything else -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid API usage (wrong call pattern, bad argument combination).
struct UsageError : Error {
    using Error::Error;
};

// Inconsistent configuration: shape mismatches, bad hyperparameters.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed or unsuitable user data (images, manifests, sizes).
struct InputError : Error {
    using Error::Error;
};

// Filesystem and serialization failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace mimo
