#pragma once

#include <stdexcept>
#include <string>

namespace fediskit {

// All library errors derive from Error so callers can catch one type and still
// get a module-qualified message.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input bytes (bad magic, truncated file).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inputs that are individually well formed but disagree with each other.
class InconsistencyError : public Error {
 public:
  using Error::Error;
};

// A request that cannot be satisfied for the given sizes (C > L, n < c, ...).
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

// A scalar parameter outside its admissible range. field() names it.
class RangeError : public Error {
 public:
  RangeError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SolverError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace fediskit
