#pragma once

#include <stdexcept>
#include <string>

namespace arcflow {

struct InvalidParameter : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidInterval : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidProblem : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConvergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config errors carry the offending line (0 when not tied to a line).
struct ConfigError : std::runtime_error {
  ConfigError(int line, const std::string &msg)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line(line) {}
  int line;
};

} // namespace arcflow
