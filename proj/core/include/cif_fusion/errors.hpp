#pragma once

#include <stdexcept>
#include <string>

namespace cif {

// Malformed or inconsistent input data (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during fitting or estimation (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FitError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class PositivityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace cif
