#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cvp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad n, epsilon <= 0, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A state was handed to a system of a different kind (word vs real point).
class KindMismatch : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

/// A configured resource cap was hit. This is not a mathematical failure.
class ResourceError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant that construction should guarantee did not hold.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

/// The weave schedule outgrew the orbit-length cap at `level` (1-based).
class ScheduleOverflow : public Error {
 public:
  ScheduleOverflow(const std::string& what, int level, unsigned long long cap)
      : Error(what), level_(level), cap_(cap) {}
  int level() const noexcept { return level_; }
  unsigned long long cap() const noexcept { return cap_; }

 private:
  int level_;
  unsigned long long cap_;
};

/// First index i with d(f(x_i), x_{i+1}) > delta.
class PseudoOrbitViolation : public PreconditionError {
 public:
  PseudoOrbitViolation(std::size_t index, double gap)
      : PreconditionError("pseudo-orbit gap " + std::to_string(gap) + " at index " +
                          std::to_string(index)),
        index_(index),
        gap_(gap) {}
  std::size_t index() const noexcept { return index_; }
  double gap() const noexcept { return gap_; }

 private:
  std::size_t index_;
  double gap_;
};

/// A constraint set does not meet the attainable range of an observable.
class EmptyConstraint : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

/// convex_decompose could not reach the requested distance under its denominator cap.
class PrecisionUnattainable : public Error {
 public:
  PrecisionUnattainable(const std::string& what, double achieved)
      : Error(what), achieved_(achieved) {}
  double achieved() const noexcept { return achieved_; }

 private:
  double achieved_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

}  // namespace cvp
