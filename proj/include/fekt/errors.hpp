#pragma once

#include <stdexcept>
#include <string>

namespace fekt {

/// Base class for every error thrown by this library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or violated call precondition.
/// The CLI maps this to exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Missing, unreadable or malformed file. The CLI maps this to exit code 3.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace fekt
