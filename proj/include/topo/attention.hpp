// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

// Single-head causal attention kernels. Dense and subset attention share one
// code path, so a subset covering every slot reproduces dense output bit for bit.

#pragma once

#include <cstddef>
#include <span>

#include "topo/tensor.hpp"

namespace topo {

struct AttentionRow {
  Vec32 scores;   // q.k_j / sqrt(d) for every cached key
  Vec32 weights;  // stable_softmax(scores)
  std::size_t pos = 0;
};

struct UlpReport {
  double max_excluded_weight = 0.0;
  double condensate_mass = 1.0;
  bool exact = true;
};

/// Keys stored dimension-major, cols[c][j] = k_j[c]. Same values as the rows
/// layout; dense scoring over it is faster and gives identical bits.
struct KeyColumns {
  std::span<const Vec32> cols;
  std::size_t rows() const noexcept { return cols.empty() ? 0 : cols[0].size(); }
};

/// 1/sqrt(d) in f32, the score scale used everywhere.
float attention_scale(std::size_t head_dim);

/// Scaled scores of q against every row of `keys`.
void attention_scores(std::span<const float> q, RowsView keys, std::span<float> scores);

/// Softmax-weighted sum over all rows. `row`, when given, receives the scores and weights.
Vec32 dense_attend(std::span<const float> q, RowsView keys, RowsView values, AttentionRow* row = nullptr);
void dense_attend_into(std::span<const float> q, RowsView keys, RowsView values, std::span<float> out,
                       AttentionRow* row = nullptr, const KeyColumns* columns = nullptr);

/// Attention restricted to `slots` (strictly ascending row indices). Scores,
/// softmax and value accumulation follow the dense order over the subset.
void subset_attend_into(std::span<const float> q, RowsView keys, RowsView values, std::span<const std::size_t> slots,
                        std::span<float> out);

/// Decides whether attending over `slots` reproduces the dense result exactly:
/// the global max lies in the subset, and every excluded exp term and weighted
/// value, added in ascending order to the dense accumulators, leaves them unchanged.
UlpReport ulp_check(std::span<const float> q, RowsView keys, RowsView values, std::span<const std::size_t> slots);

}  // namespace topo
