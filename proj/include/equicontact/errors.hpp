#pragma once

#include <stdexcept>
#include <string>

namespace equicontact {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A twist/wrench/Jacobian was handed to an operation expecting the other frame.
class FrameMismatch : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Raised by the plant when the body velocity leaves the physical envelope.
class SimulationBlowup : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace equicontact
