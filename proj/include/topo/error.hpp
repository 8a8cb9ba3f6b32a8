// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace topo {

enum class ErrorKind {
  kDimensionMismatch,
  kEmptyInput,
  kInvalidArgument,
  kSequenceOverflow,
  kMalformedHeader,
  kShapeMismatch,
  kTruncated,
  kNotFound,
  kIo,
  kInvariantViolation,
  kOracleInfeasible,
  kInsufficientData,
  kMemoryBudget,
};

std::string_view to_string(ErrorKind kind);

// All library failures are reported through this type; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) fail(kind, message);
}

}  // namespace topo
