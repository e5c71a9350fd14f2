#pragma once

#include <stdexcept>
#include <string>

namespace evclip {

/// Malformed input: bad files, violated preconditions, out-of-range arguments.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while running an otherwise valid request (divergence, I/O).
class RuntimeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace evclip
