#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gradalign {

// Every error carries a stable code used as the machine-parseable prefix of
// CLI diagnostics ("error[E_CONTRACT]: ...").
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Violated precondition: shape mismatch, invalid encoding, bad argument.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("E_CONTRACT", what) {}
};

/// An iterative decomposition hit its iteration cap.
class DecompositionError : public Error {
 public:
  DecompositionError(std::int64_t rows, std::int64_t cols)
      : Error("E_DECOMPOSITION",
              "decomposition did not converge for " + std::to_string(rows) + "x" +
                  std::to_string(cols) + " matrix"),
        rows_(rows),
        cols_(cols) {}

  std::int64_t rows() const noexcept { return rows_; }
  std::int64_t cols() const noexcept { return cols_; }

 private:
  std::int64_t rows_;
  std::int64_t cols_;
};

/// A materialization would exceed a configured memory cap.
class SizeError : public Error {
 public:
  explicit SizeError(const std::string& what) : Error("E_SIZE", what) {}
};

/// Non-finite intermediate value in a forward or backward pass.
class NumericError : public Error {
 public:
  NumericError(const std::string& layer, const std::string& what)
      : Error("E_NUMERIC", "non-finite value in " + layer + ": " + what), layer_(layer) {}

  const std::string& layer() const noexcept { return layer_; }

 private:
  std::string layer_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, const std::string& what)
      : Error("E_DIVERGED", "diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

class ParseError : public Error {
 public:
  ParseError(std::int64_t line, const std::string& what)
      : Error("E_PARSE", "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::int64_t line() const noexcept { return line_; }

 private:
  std::int64_t line_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error("E_SCHEMA", what) {}
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error("E_IO", path + ": " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace gradalign
