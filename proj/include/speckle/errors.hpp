#pragma once

#include <stdexcept>

namespace speckle {

/// Raised when a computation produces non-finite values or otherwise fails numerically.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace speckle
