// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace splatkern {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Geometrically meaningless input (zero quaternion, collapsed tangent frame).
class DegenerateInputError : public Error {
  public:
    using Error::Error;
};

/// Tensor or vector dimensions that do not chain.
class ShapeError : public Error {
  public:
    using Error::Error;
};

/// Invalid run configuration (sample counts, architecture, presets).
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// A gradient or loss became non-finite.
class GradientExplosionError : public Error {
  public:
    using Error::Error;
};

/// Pre-training ended with a worse held-out error than it started with.
class PretrainingError : public Error {
  public:
    using Error::Error;
};

/// Malformed or unreadable input file.
class ParseError : public Error {
  public:
    using Error::Error;
};

/// Input files that parse but violate dataset invariants.
class ValidationError : public Error {
  public:
    using Error::Error;
};

class CheckpointError : public Error {
  public:
    enum class Kind { BadMagic, VersionMismatch, Truncated, CountMismatch, Io };

    CheckpointError(Kind kind, const std::string &what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

  private:
    Kind kind_;
};

} // namespace splatkern
