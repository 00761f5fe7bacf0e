// Exception types used across the library.

#ifndef SLPEPS_ERRORS_HPP
#define SLPEPS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace slpeps {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Mismatched axis lengths in a contraction, merge or bond join.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied parameter (non-positive cap, empty schedule, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Requested object exceeds a configured memory/size cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// A numerical backend failed (factorization did not converge, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed checkpoint or other on-disk data.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Operation applied to sites that are not adjacent / bonds that do not exist.
class TopologyError : public Error {
 public:
  using Error::Error;
};

// Zero-norm state where a normalizable state is required.
class DegenerateStateError : public Error {
 public:
  using Error::Error;
};

// Input does not satisfy a documented precondition (e.g. wrong canonical form).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace slpeps

#endif  // SLPEPS_ERRORS_HPP
