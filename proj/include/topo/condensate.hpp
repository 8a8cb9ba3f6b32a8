// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

// Position selection: which cached positions a sparse layer attends to.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "topo/attention.hpp"
#include "topo/model.hpp"
#include "topo/tensor.hpp"

namespace topo {

enum class Selector { kKeyNorm, kScores };

struct CondensateConfig {
  std::size_t window = 64;
  std::size_t topk = 32;
  std::size_t k_spike = 32;
  std::size_t persist_threshold = 2;
  std::size_t w_min = 64;
  std::size_t w_max = 256;
  std::size_t budget_cap = 128;
  std::vector<std::size_t> pillar_layers;  // sorted, unique
  Selector selector = Selector::kKeyNorm;
  bool adaptive_window = false;  // window from repetition instead of `window`

  bool is_pillar(std::size_t layer) const;
};

/// Throws kInvalidArgument naming the offending field.
void validate(const CondensateConfig& cfg, std::size_t n_layers);

/// Pillars {0, L/2}; a single pillar {0} when L < 2.
std::vector<std::size_t> default_pillars(std::size_t n_layers);
/// Every layer is a pillar: plain dense decoding.
CondensateConfig dense_config(std::size_t n_layers);

enum class Part : std::uint8_t { kAnchor, kWindow, kPersistent, kDynamic };

struct CondensateSet {
  std::vector<std::size_t> positions;  // ascending, unique
  std::vector<Part> parts;             // parallel to positions

  std::size_t size() const noexcept { return positions.size(); }
  std::size_t count(Part p) const;
  bool contains(std::size_t pos) const;
};

class PersistentSet {
 public:
  /// Returns true when newly inserted.
  bool insert(std::size_t pos, std::size_t step);
  bool contains(std::size_t pos) const;
  std::size_t size() const noexcept { return positions_.size(); }
  bool empty() const noexcept { return positions_.empty(); }
  std::span<const std::size_t> positions() const noexcept { return positions_; }
  /// Step at which `pos` was promoted; requires contains(pos).
  std::size_t inserted_at(std::size_t pos) const;

 private:
  std::vector<std::size_t> positions_;  // ascending
  std::vector<std::size_t> steps_;      // parallel
};

/// The k highest scores among positions [1, exclude_from); ties to the lower
/// position. Result ordered by rank.
std::vector<std::size_t> topk_scores(std::span<const float> scores, std::size_t exclude_from, std::size_t k);

/// topk_scores over key L2 norms.
std::vector<std::size_t> topk_keynorm(RowsView keys, std::size_t exclude_from, std::size_t k);

/// Anchor + last `window` of n positions + persistent members (ascending) + `dynamic`.
/// Past `budget`, non-anchor non-window members go lowest `score_of` first.
/// `score_of` is indexed by position and only read for those members.
template <class ScoreFn>
CondensateSet assemble_condensate(std::size_t n, std::size_t window, std::span<const std::size_t> persistent,
                                  std::span<const std::size_t> dynamic, std::size_t budget, ScoreFn score_of);

/// Full selection from a score row of length N = scores.size().
CondensateSet build_condensate(std::span<const float> scores, const CondensateConfig& cfg,
                               const PersistentSet& persistent, std::size_t window);
CondensateSet build_condensate(std::span<const float> scores, const CondensateConfig& cfg,
                               const PersistentSet& persistent);

/// Attention over the set's positions. Rows of keys/values are positions.
Vec32 sparse_attend(std::span<const float> q, RowsView keys, RowsView values, const CondensateSet& set,
                    UlpReport* ulp = nullptr);

/// Fraction of bigrams in the last `w_max` tokens that occur more than once there.
float rep_score(std::span<const TokenId> tokens, std::size_t w_max);

/// w_min + (w_max - w_min) * rep, rounded, clamped to [w_min, w_max].
std::size_t adaptive_window(float rep, const CondensateConfig& cfg);

struct MassSplit {
  double condensate = 0.0;
  double middle = 0.0;
};

/// Softmax of the row's scores recomputed in f64, split by membership in `set`.
MassSplit mass_coverage(const AttentionRow& row, const CondensateSet& set);

/// Top-k of key norms among offered positions, maintained incrementally.
/// Agrees with topk_keynorm over the same candidate positions.
class KeyNormIndex {
 public:
  explicit KeyNormIndex(std::size_t k = 0) : k_(k) {}
  void clear(std::size_t k);
  void offer(std::size_t pos, float norm);
  /// Positions in rank order.
  std::vector<std::size_t> top() const;
  std::size_t capacity() const noexcept { return k_; }
  std::size_t offered_upto = 1;  // next position to offer, maintained by the owner

 private:
  struct Entry {
    float norm;
    std::size_t pos;
  };
  static bool better(const Entry& a, const Entry& b) {
    return a.norm > b.norm || (a.norm == b.norm && a.pos < b.pos);
  }
  std::size_t k_;
  std::vector<Entry> entries_;  // best first
};

// ---------------------------------------------------------------------------

template <class ScoreFn>
CondensateSet assemble_condensate(std::size_t n, std::size_t window, std::span<const std::size_t> persistent,
                                  std::span<const std::size_t> dynamic, std::size_t budget, ScoreFn score_of) {
  CondensateSet out;
  if (n == 0) return out;
  const std::size_t w = std::min(window, n);
  const std::size_t win_begin = n - w;
  struct Extra {
    std::size_t pos;
    Part part;
  };
  std::vector<Extra> extra;
  extra.reserve(persistent.size() + dynamic.size());
  for (std::size_t p : persistent) {
    if (p >= 1 && p < win_begin) extra.push_back({p, Part::kPersistent});
  }
  for (std::size_t p : dynamic) {
    if (p < 1 || p >= win_begin) continue;
    if (!std::binary_search(persistent.begin(), persistent.end(), p)) extra.push_back({p, Part::kDynamic});
  }
  const std::size_t fixed = (win_begin > 0 ? 1 : 0) + w;
  const std::size_t room = budget > fixed ? budget - fixed : 0;
  if (extra.size() > room) {
    std::vector<float> sc(extra.size());
    for (std::size_t i = 0; i < extra.size(); ++i) sc[i] = score_of(extra[i].pos);
    std::vector<std::size_t> order(extra.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sc[a] > sc[b] || (sc[a] == sc[b] && extra[a].pos < extra[b].pos);
    });
    std::vector<Extra> kept;
    kept.reserve(room);
    for (std::size_t i = 0; i < room; ++i) kept.push_back(extra[order[i]]);
    extra = std::move(kept);
  }
  std::sort(extra.begin(), extra.end(), [](const Extra& a, const Extra& b) { return a.pos < b.pos; });
  out.positions.reserve(1 + extra.size() + w);
  if (win_begin > 0) {
    out.positions.push_back(0);
    out.parts.push_back(Part::kAnchor);
  }
  for (const Extra& e : extra) {
    out.positions.push_back(e.pos);
    out.parts.push_back(e.part);
  }
  for (std::size_t p = win_begin; p < n; ++p) {
    out.positions.push_back(p);
    out.parts.push_back(p == 0 ? Part::kAnchor : Part::kWindow);
  }
  return out;
}

}  // namespace topo
