#pragma once

#include <stdexcept>
#include <string>

namespace crn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for a primitive.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or malformed input file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, singular system, or a diverging fit.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace crn
