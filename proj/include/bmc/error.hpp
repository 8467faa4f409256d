#pragma once

#include <stdexcept>
#include <string>

namespace bmc {

/// Base of every error the library raises. The category maps onto the CLI
/// exit code (see tools/prefbmc.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or API misuse (exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data (exit code 2).
class DataError : public Error {
public:
    using Error::Error;
};

/// NaN, non-finite loss, failed oracle (exit code 3).
class NumericError : public Error {
public:
    using Error::Error;
};

/// Editor endpoint or other remote service failure (exit code 4).
class ExternalError : public Error {
public:
    using Error::Error;
};

}  // namespace bmc
