#pragma once

#include <stdexcept>
#include <string>

namespace mgnet {

#ifdef MGNET_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

/// Raised when a caller violates an operation's precondition (shape, range,
/// channel count). Messages name the offending quantity.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an external file (dataset, checkpoint, config) is malformed.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

/// Caps the number of worker threads used by the parallel kernels.
/// Values < 1 restore the runtime default.
void set_thread_limit(int threads);
int thread_limit();

}  // namespace mgnet
