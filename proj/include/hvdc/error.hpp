#pragma once

#include <stdexcept>
#include <string>

namespace hvdc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Syntax error in a case or scenario file, carrying the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, int line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// An element references another element that does not exist.
class ReferenceError : public Error {
 public:
  using Error::Error;
};

/// A domain invariant (bounds ordering, connectivity, ...) does not hold.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the numerical layer: dimension mismatch, non-finite evaluations.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace hvdc
