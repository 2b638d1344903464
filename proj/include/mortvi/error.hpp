#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mortvi {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid argument value (sd <= 0, rate <= 0, negative count, ...).
struct DomainError : Error {
  using Error::Error;
};

// Mismatched array dimensions.
struct ShapeError : Error {
  using Error::Error;
};

// Malformed input text. Carries the 1-based line number when known.
struct ParseError : Error {
  long line = 0;
  ParseError(const std::string& msg, long line_no)
      : Error("line " + std::to_string(line_no) + ": " + msg), line(line_no) {}
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Structurally valid input with inconsistent content (duplicates, coverage gaps, ...).
struct DataError : Error {
  using Error::Error;
};

// Window or index outside the data span.
struct RangeError : Error {
  using Error::Error;
};

// Invalid run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Non-finite or overflowing value produced during evaluation.
struct EvalError : Error {
  using Error::Error;
};

// Optimization aborted. Carries the step index and the parameter values at abort.
struct FitError : Error {
  long long step = -1;
  std::vector<double> snapshot;
  FitError(const std::string& msg, long long at_step, std::vector<double> params)
      : Error("step " + std::to_string(at_step) + ": " + msg),
        step(at_step),
        snapshot(std::move(params)) {}
};

}  // namespace mortvi
