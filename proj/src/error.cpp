// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/error.hpp"

namespace topo {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimensionMismatch: return "dimension mismatch";
    case ErrorKind::kEmptyInput: return "empty input";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kSequenceOverflow: return "sequence overflow";
    case ErrorKind::kMalformedHeader: return "malformed header";
    case ErrorKind::kShapeMismatch: return "shape mismatch";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kNotFound: return "not found";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kInvariantViolation: return "invariant violation";
    case ErrorKind::kOracleInfeasible: return "oracle infeasible";
    case ErrorKind::kInsufficientData: return "insufficient data";
    case ErrorKind::kMemoryBudget: return "memory budget";
  }
  return "unknown";
}

}  // namespace topo
