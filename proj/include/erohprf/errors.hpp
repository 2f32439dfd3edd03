#pragma once

#include <stdexcept>
#include <string>

namespace erohprf {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/kernel dimension mismatch between operands.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Invalid convolution geometry (stride, padding, kernel extent, output size).
class GeometryError : public Error {
public:
    explicit GeometryError(const std::string& msg) : Error("geometry error: " + msg) {}
};

// Invalid block configuration (scales, RF types, channel/group wiring).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Numerically invalid parameter state, e.g. non-positive variance + eps.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Invalid metric input (empty prediction set, no scorable class, ...).
class InputError : public Error {
public:
    explicit InputError(const std::string& msg) : Error("input error: " + msg) {}
};

// Malformed file content (checkpoint records, prediction CSV).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error("parse error: " + msg) {}
};

// Filesystem-level failure (open/read/write).
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

// Training diverged or could not proceed.
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& msg) : Error("training error: " + msg) {}
};

}  // namespace erohprf
