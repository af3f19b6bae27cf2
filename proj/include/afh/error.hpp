#pragma once

#include <stdexcept>
#include <string>

namespace afh {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A patch location outside the host image.
class LocationError : public Error {
 public:
  using Error::Error;
};

// Invalid or mismatched patch geometry.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Tensor / image shapes that do not agree with a config or with each other.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace afh
