// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace flowkern {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions disagree with each other or with a plan.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Serialized data (block, container, report) is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A softmax row or accumulator has no admissible key.
class EmptyWindowError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the operation's domain (non-finite input, zero tile, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// No candidate satisfies the memory limits.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace flowkern
