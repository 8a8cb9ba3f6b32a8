// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "topo/attention.hpp"
#include "topo/model.hpp"
#include "topo/tensor.hpp"

namespace topo {

enum class Retention { kFull, kEvict };

// Keys are stored post-RoPE. Every layer and kv head shares one slot layout:
// slot s holds logical position positions()[s]. In full retention slot == position.
class KVCache {
 public:
  KVCache() = default;
  KVCache(const ModelSpec& spec, Retention retention);

  Retention retention() const noexcept { return retention_; }
  std::size_t n_layers() const noexcept { return n_layers_; }
  std::size_t n_kv_heads() const noexcept { return n_kv_; }
  std::size_t head_dim() const noexcept { return d_; }

  /// Logical length N: number of positions ever opened.
  std::size_t length() const noexcept { return length_; }
  /// Resident slots.
  std::size_t resident() const noexcept { return positions_.size(); }
  std::span<const std::size_t> positions() const noexcept { return positions_; }
  std::optional<std::size_t> slot_of(std::size_t pos) const;

  /// Opens the next logical position; each layer then appends its k/v.
  void open_position(std::size_t max_seq);
  void append(std::size_t layer, std::size_t kv_head, std::span<const float> k, std::span<const float> v);

  /// Rows appended so far for (layer, kv_head).
  RowsView keys(std::size_t layer, std::size_t kv_head) const;
  RowsView values(std::size_t layer, std::size_t kv_head) const;
  /// The same keys, dimension-major.
  KeyColumns key_columns(std::size_t layer, std::size_t kv_head) const;

  /// Keeps only the given logical positions (ascending, all resident). Evict mode only.
  void retain(std::span<const std::size_t> keep);

 private:
  std::size_t index(std::size_t layer, std::size_t kv_head) const { return layer * n_kv_ + kv_head; }

  Retention retention_ = Retention::kFull;
  std::size_t n_layers_ = 0, n_kv_ = 0, d_ = 0;
  std::size_t length_ = 0;
  std::vector<std::size_t> positions_;
  std::vector<Vec32> keys_, values_;             // [layer * n_kv + head], rows of d
  std::vector<std::vector<Vec32>> key_cols_;     // [layer * n_kv + head][c]
};

}  // namespace topo
