#pragma once

#include <stdexcept>
#include <string>

namespace nl2sql {

// Malformed input files (JSON syntax, missing fields).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input that parses but breaks a data invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BoundsError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Operation applied to a column of the wrong dtype.
class TypeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A perturbation category that cannot be applied to the chosen value.
class InapplicableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nl2sql
