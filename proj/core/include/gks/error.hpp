// Copyright (c) 2026 the gksnet authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gks {

// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor extents or operand shapes are inconsistent.
struct ShapeError : Error {
  using Error::Error;
};

// Configuration values are out of range, unknown, or mutually inconsistent.
struct ConfigError : Error {
  using Error::Error;
};

// File or stream content is missing, malformed, or unwritable.
struct IoError : Error {
  using Error::Error;
};

// A numeric computation left its defined domain (non-finite values, ...).
struct NumericError : Error {
  using Error::Error;
};

}  // namespace gks
