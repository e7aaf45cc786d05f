#pragma once

#include <stdexcept>
#include <string>

namespace bseq {

// Exit-code mapping lives in the CLI: ConfigError -> 2, DataError -> 3,
// NumericError -> 4. Everything else is an internal failure.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

struct StateError : Error {
    explicit StateError(const std::string& msg) : Error(msg) {}
};

struct CheckpointError : DataError {
    explicit CheckpointError(const std::string& msg) : DataError(msg) {}
};

struct InsufficientDataError : DataError {
    explicit InsufficientDataError(const std::string& msg) : DataError(msg) {}
};

}  // namespace bseq
