#pragma once

#include <stdexcept>
#include <string>

namespace gblab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Precondition or shape violations on public entry points.
struct InvalidArgument : Error {
  using Error::Error;
};

// File-system and serialization failures; message names the offending path.
struct IoError : Error {
  using Error::Error;
};

// Checkpoint or manifest written by an incompatible version.
struct IncompatibleVersion : Error {
  using Error::Error;
};

// Non-finite loss encountered during training; message names the step.
struct DivergenceError : Error {
  using Error::Error;
};

// Metric has no defined value on the given inputs (e.g. empty foreground).
struct UndefinedMetric : Error {
  using Error::Error;
};

}  // namespace gblab
