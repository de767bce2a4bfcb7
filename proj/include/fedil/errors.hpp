#pragma once

#include <stdexcept>
#include <string>

namespace fedil {

/// Base class for every error raised by the simulator.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: bad ranges, infeasible partitions, dimension mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Invalid call arguments (label out of range, empty batch, unknown id).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (IDX files, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during training (non-finite loss or gradient).
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A client upload that does not fit the protocol (e.g. wrong length).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Internal invariant violation, e.g. promoting an example twice.
class InvariantError : public Error {
 public:
  using Error::Error;
};

/// A precondition on a mathematical routine that does not hold.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message names the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedil
