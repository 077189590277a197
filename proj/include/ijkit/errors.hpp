#pragma once

#include <cstddef>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace ijkit {

/// %g rendering of a double for diagnostics.
inline std::string diag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: dimension mismatches, out-of-range indices, bad
/// dataset contents.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A per-datum function produced a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(std::size_t index, const std::string& what)
      : Error("datum " + std::to_string(index) + ": " + what), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// The (weighted) Jacobian H(theta, w) is singular or too close to it.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, double min_singular_value)
      : Error(what), min_singular_value_(min_singular_value) {}

  double min_singular_value() const noexcept { return min_singular_value_; }

 private:
  double min_singular_value_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ijkit
