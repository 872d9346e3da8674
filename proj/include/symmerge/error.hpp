// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace symmerge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed arguments: shapes, non-finite values, out-of-range ids.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Two checkpoints (or a checkpoint and a transform) disagree on geometry.
class ConfigMismatch : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class InvalidTransform : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// Checkpoint container problems: missing tensors, bad headers, I/O.
class LoadError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace symmerge
