#pragma once

#include <stdexcept>
#include <string>

namespace ana {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration or malformed config file. CLI maps this to exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Tensor/region dimensions do not match what an operation expects.
struct ShapeError : Error {
  using Error::Error;
};

// Crop/mask arithmetic given inconsistent windows.
struct GeometryError : Error {
  using Error::Error;
};

// File I/O, decoding, or archive format problems.
struct IoError : Error {
  using Error::Error;
};

}  // namespace ana
