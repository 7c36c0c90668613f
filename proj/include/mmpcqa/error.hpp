#pragma once

#include <stdexcept>
#include <string>

namespace mmpcqa {

// Bad input, bad arguments or violated preconditions. The CLI maps these to
// exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Failures that happen while doing otherwise valid work (I/O, non-finite
// values, diverged training). The CLI maps these to exit code 2.
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmpcqa
