// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>

namespace topo {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;  // an experiment ran but missed its threshold (--assert)
inline constexpr int kExitUsage = 2;   // bad flags, config or input files

/// Entry point of the `topo` tool; writes human output to `out`, errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace topo
