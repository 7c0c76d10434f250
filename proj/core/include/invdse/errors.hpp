#pragma once

#include <stdexcept>
#include <string>

namespace invdse {

/// Base of every error the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration files, design-space files or CLI arguments.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or network shape mismatches, and stale activation tapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Failures of the QoR evaluation boundary (unknown table rows, invalid input).
class OracleError : public Error {
 public:
  using Error::Error;
};

/// The evaluation budget has been used up.
class BudgetExhausted : public OracleError {
 public:
  using OracleError::OracleError;
};

/// Non-finite losses, gradients or sampler states.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// CSV and checkpoint parsing failures. Line numbers are 1-based; 0 means unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace invdse
