// Copyright 2026 The fqconv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fqconv {

/// Root of the fqconv exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not line up for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An argument value violates an operation's precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// An API was called in an unsupported state (missing shadow copy, non-scalar
/// loss, wrong network mode, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// I/O or parse failure while reading datasets and archives.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// The integer runtime disagrees with the fake-quant float path.
class EquivalenceError : public Error {
 public:
  using Error::Error;
};

class CompileError : public Error {
 public:
  using Error::Error;
};

/// A network graph does not have the shape a transform expects.
class StructuralError : public Error {
 public:
  using Error::Error;
};

}  // namespace fqconv
