// SPDX-License-Identifier: Apache-2.0
//
// Shared vocabulary types and error hierarchy.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace guiderag {

using TokenId = std::int32_t;
using PassageId = std::int64_t;
using ExampleId = std::int64_t;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input supplied by the caller: malformed files, invalid arguments, dangling references.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A numerical computation produced NaN or infinity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace guiderag
