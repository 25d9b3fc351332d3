#pragma once

#include <stdexcept>
#include <string>

namespace qa {

// Bad arguments, malformed files, broken invariants. CLI exit code 2.
struct validation_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Problem size outside the supported range of an exhaustive or dense path.
struct unsupported_size_error : validation_error {
  using validation_error::validation_error;
};

// Solver/integrator breakdown: non-convergence, step underflow, trace leak.
// CLI exit code 3.
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace qa
