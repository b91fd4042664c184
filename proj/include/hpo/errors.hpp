#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hpo {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (dimension mismatch, bad range).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// NaN/Inf showed up mid-computation. `step` is the iteration that produced it.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

class NonContractiveError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, const std::string& why)
      : Error(field + ": " + why), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class InfeasiblePlanError : public Error {
 public:
  using Error::Error;
};

class TooLargeError : public Error {
 public:
  using Error::Error;
};

#define HPO_REQUIRE(cond, msg)                                             \
  do {                                                                     \
    if (!(cond)) throw ::hpo::ContractViolation(std::string(__func__) +    \
                                                ": " + (msg));             \
  } while (0)

}  // namespace hpo
