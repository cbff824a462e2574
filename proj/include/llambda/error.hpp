#pragma once

#include <stdexcept>
#include <string>

namespace llambda {

/// Base class of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A pipeline stage failed on its input data (CLI exit code 3).
class StageError : public Error {
public:
    using Error::Error;
};

/// Filesystem and format failures while reading or writing artifacts.
class IoError : public StageError {
public:
    using StageError::StageError;
};

/// An external service (the LLM endpoint) failed (CLI exit code 4).
class ExternalError : public Error {
public:
    ExternalError(const std::string& what, int attempts)
        : Error(what), attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

} // namespace llambda
