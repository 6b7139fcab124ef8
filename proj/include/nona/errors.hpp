#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nona {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A value lies outside the domain of an operation (negative base with
// fractional exponent, zero-norm cosine operand, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A caller-side precondition was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A softmax row had no finite entry left after masking.
class DegenerateRowError : public Error {
 public:
  explicit DegenerateRowError(std::size_t row)
      : Error("softmax row " + std::to_string(row) + " is fully masked"), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class NotFittedError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, const std::string& what)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

class SingularSystemError : public Error {
 public:
  using Error::Error;
};

// Malformed configuration or checkpoint; the message names the key or the
// position that failed.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace nona
