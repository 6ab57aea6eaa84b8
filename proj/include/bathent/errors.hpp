#pragma once

#include <stdexcept>
#include <string>

namespace bathent {

/// Covariance matrix is not symmetric, not positive definite or otherwise unphysical.
class InvalidStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or out-of-range configuration (bath, pulse, integration settings).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A runtime invariant was violated while integrating; carries the time of the breach.
class PropagationError : public std::runtime_error {
 public:
  PropagationError(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

/// API used out of order (e.g. continuing a trajectory whose state was not retained).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A file could not be read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; `offset` is the byte offset of the failure.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace bathent
