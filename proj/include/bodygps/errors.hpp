#pragma once

#include <stdexcept>
#include <string>

namespace bodygps {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed header or document. `key` names the offending field when known.
struct ParseError : Error {
    ParseError(std::string key_name, const std::string& what)
        : Error(key_name.empty() ? what : key_name + ": " + what), key(std::move(key_name)) {}
    std::string key;
};

struct UnsupportedTypeError : Error {
    using Error::Error;
};

struct TruncationError : Error {
    using Error::Error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct FormatError : Error {
    using Error::Error;
};

struct IncompatibleError : Error {
    using Error::Error;
};

struct MissingLandmarkError : Error {
    using Error::Error;
};

struct ModeError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct GenerationError : Error {
    using Error::Error;
};

struct GeometryMismatchError : Error {
    using Error::Error;
};

}  // namespace bodygps
