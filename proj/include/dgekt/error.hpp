#pragma once

#include <stdexcept>
#include <string>

namespace dgekt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data (CSV rows, config files, checkpoints).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Incompatible tensor shapes or dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

}  // namespace dgekt
