#pragma once

#include <stdexcept>
#include <string>

namespace neuralme {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionMismatch : public Error {
public:
  DimensionMismatch(const std::string& what, long expected, long got)
      : Error(what + ": expected " + std::to_string(expected) + ", got " +
              std::to_string(got)) {}
};

class NonFiniteInput : public Error {
public:
  using Error::Error;
};

class NonFiniteResult : public Error {
public:
  using Error::Error;
};

class CapabilityMissing : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  using Error::Error;
};

class ValidationError : public Error {
public:
  using Error::Error;
};

class SingularSystem : public Error {
public:
  using Error::Error;
};

class MaxStepsExceeded : public Error {
public:
  using Error::Error;
};

class NonFiniteState : public Error {
public:
  NonFiniteState(double t)
      : Error("non-finite state encountered at t = " + std::to_string(t)),
        time(t) {}
  double time;
};

class StepUnderflow : public Error {
public:
  using Error::Error;
};

class TapeMissing : public Error {
public:
  using Error::Error;
};

class InsufficientCycles : public Error {
public:
  using Error::Error;
};

class NonUniformInput : public Error {
public:
  using Error::Error;
};

} // namespace neuralme
