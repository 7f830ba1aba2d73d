// Copyright (c) 2026 The datapallet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace datapallet {

// Error taxonomy matching the CLI exit-code contract:
//   usage/input problems        -> ValidationError, IoError   (exit 2)
//   unresolvable pallet id/path -> NotFoundError              (exit 3)
//   hash or digest mismatch     -> IntegrityError             (exit 4)
//   malformed image bytes       -> FormatError                (exit 4)
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public Error {
public:
  using Error::Error;
};

// Image bytes violate the format: bad magic, truncated table,
// overlapping partitions, broken archive framing. The message names the
// violated invariant.
class FormatError : public Error {
public:
  using Error::Error;
};

// A domain invariant does not hold (annotation schema, path traversal,
// malformed id, bad spec).
class ValidationError : public Error {
public:
  using Error::Error;
};

class NotFoundError : public Error {
public:
  using Error::Error;
};

// Content verification failed: recorded digests do not match the bytes.
class IntegrityError : public Error {
public:
  using Error::Error;
};

}  // namespace datapallet
