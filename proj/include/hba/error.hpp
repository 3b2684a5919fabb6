#pragma once

#include <stdexcept>
#include <string>

namespace hba {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file (ragged rows, bad header, unparsable cell).
class ParseError : public Error {
 public:
  using Error::Error;
};

// A value violates a documented domain invariant (negative count, NaN forcing,
// out-of-range rank, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// The forcing record does not reach far enough back (or forward) for the
// requested alignment or embedding.
class InsufficientHistory : public Error {
 public:
  using Error::Error;
};

// Non-finite arithmetic inside an iterative algorithm.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class DegenerateKernel : public Error {
 public:
  using Error::Error;
};

class DisconnectedGraph : public Error {
 public:
  DisconnectedGraph(const std::string& what, int components)
      : Error(what), components_(components) {}
  int components() const noexcept { return components_; }

 private:
  int components_;
};

}  // namespace hba
