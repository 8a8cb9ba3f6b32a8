// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

// Per-step attention scaling: dense over N keys vs sparse over the condensate
// set, on synthetic caches.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "topo/condensate.hpp"

namespace topo {

struct BenchConfig {
  std::vector<std::size_t> n_list = {1024, 2048, 4096, 8192, 16384, 32768, 65536, 131072, 262144};
  std::size_t repeats = 21;  // at least 20
  std::size_t warmup = 3;
  std::size_t n_heads = 8;
  std::size_t n_kv_heads = 1;
  std::size_t head_dim = 64;
  std::size_t dense_max_n = 16384;  // dense timing above this is skipped
  std::size_t memory_budget_bytes = std::size_t{1} << 30;
  std::uint64_t seed = 1;
  CondensateConfig condensate;  // selector and W/k/B_max; pillars unused
};

struct BenchRecord {
  std::size_t n = 0;
  std::optional<double> t_dense_ms;   // absent when dense is infeasible
  std::optional<double> t_sparse_ms;  // absent on projected rows
  double mad_dense_ms = 0.0;
  double mad_sparse_ms = 0.0;
  std::uint64_t ops_dense = 0;    // one decode step, one layer, all heads
  std::uint64_t ops_sparse = 0;
  std::uint64_t ops_prefill = 0;  // dense prefill of n tokens, one layer, all heads
  std::size_t set_size = 0;       // largest |C| over heads
  bool projected = false;         // t_dense_ms comes from extrapolate_quadratic

  double sparsity() const;
  /// t_dense / t_sparse, when both are present.
  std::optional<double> speedup() const;
};

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

struct ScalingFit {
  LogLogFit dense;
  LogLogFit sparse;
};

/// Least squares of log y against log x. Needs at least 2 points with x, y > 0.
LogLogFit fit_loglog(std::span<const double> x, std::span<const double> y);

/// Wall-clock slopes over records holding both measured times; needs >= 4 of them.
ScalingFit fit_slopes(std::span<const BenchRecord> records);

/// t_measured * (n_target / n0)^2.
double extrapolate_quadratic(double t_measured_ms, std::size_t n0, std::size_t n_target);

/// Median and median absolute deviation.
std::pair<double, double> median_mad(std::vector<double> xs);

std::vector<BenchRecord> run_scaling(const BenchConfig& cfg);

/// Appends a projected dense row at `n_target` from the largest measured dense time.
BenchRecord project_row(std::span<const BenchRecord> records, std::size_t n_target, const BenchConfig& cfg);

/// Header `N,t_dense_ms,t_sparse_ms,ops_dense,ops_sparse,sparsity,speedup,projected`.
std::string to_csv(std::span<const BenchRecord> records);
std::string to_table(std::span<const BenchRecord> records);

}  // namespace topo
