#pragma once

#include <stdexcept>
#include <string>

namespace ndcn {

// Bad shapes, out-of-range parameters, malformed calls.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inputs that are well-formed but numerically unusable (zero denominators,
// zero normalizers, negative bases under fractional exponents).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Adaptive step size underflow or step budget exhausted.
class StiffnessError : public std::runtime_error {
 public:
  StiffnessError(const std::string& what, double t)
      : std::runtime_error(what + " at t=" + std::to_string(t)), time_(t) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

// Non-finite values produced during a forward pass or training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ndcn
