// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/kv_cache.hpp"

#include <algorithm>
#include <string>

namespace topo {

KVCache::KVCache(const ModelSpec& spec, Retention retention)
    : retention_(retention),
      n_layers_(spec.n_layers),
      n_kv_(spec.n_kv_heads),
      d_(spec.head_dim),
      keys_(spec.n_layers * spec.n_kv_heads),
      values_(spec.n_layers * spec.n_kv_heads),
      key_cols_(spec.n_layers * spec.n_kv_heads, std::vector<Vec32>(spec.head_dim)) {}

std::optional<std::size_t> KVCache::slot_of(std::size_t pos) const {
  if (retention_ == Retention::kFull) {
    if (pos < positions_.size()) return pos;
    return std::nullopt;
  }
  auto it = std::lower_bound(positions_.begin(), positions_.end(), pos);
  if (it == positions_.end() || *it != pos) return std::nullopt;
  return static_cast<std::size_t>(it - positions_.begin());
}

void KVCache::open_position(std::size_t max_seq) {
  require(length_ < max_seq, ErrorKind::kSequenceOverflow,
          "sequence length would exceed max_seq " + std::to_string(max_seq));
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    require(keys_[i].size() == positions_.size() * d_, ErrorKind::kInvariantViolation,
            "kv cache: previous position incomplete");
  }
  positions_.push_back(length_);
  ++length_;
}

void KVCache::append(std::size_t layer, std::size_t kv_head, std::span<const float> k, std::span<const float> v) {
  require(layer < n_layers_ && kv_head < n_kv_, ErrorKind::kInvalidArgument, "kv cache: head out of range");
  require(k.size() == d_ && v.size() == d_, ErrorKind::kDimensionMismatch, "kv cache: head_dim");
  Vec32& kk = keys_[index(layer, kv_head)];
  Vec32& vv = values_[index(layer, kv_head)];
  require(kk.size() + d_ == positions_.size() * d_, ErrorKind::kInvariantViolation,
          "kv cache: append without an open position");
  kk.insert(kk.end(), k.begin(), k.end());
  vv.insert(vv.end(), v.begin(), v.end());
  auto& cols = key_cols_[index(layer, kv_head)];
  for (std::size_t c = 0; c < d_; ++c) cols[c].push_back(k[c]);
}

RowsView KVCache::keys(std::size_t layer, std::size_t kv_head) const {
  return RowsView{keys_[index(layer, kv_head)], d_};
}

KeyColumns KVCache::key_columns(std::size_t layer, std::size_t kv_head) const {
  return KeyColumns{key_cols_[index(layer, kv_head)]};
}

RowsView KVCache::values(std::size_t layer, std::size_t kv_head) const {
  return RowsView{values_[index(layer, kv_head)], d_};
}

void KVCache::retain(std::span<const std::size_t> keep) {
  require(retention_ == Retention::kEvict, ErrorKind::kInvalidArgument, "kv cache: retain() needs evict mode");
  std::vector<std::size_t> slots;
  slots.reserve(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    require(i == 0 || keep[i] > keep[i - 1], ErrorKind::kInvalidArgument, "kv cache: keep list must be ascending");
    auto s = slot_of(keep[i]);
    require(s.has_value(), ErrorKind::kInvariantViolation,
            "kv cache: position " + std::to_string(keep[i]) + " already evicted");
    slots.push_back(*s);
  }
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    require(keys_[i].size() == positions_.size() * d_, ErrorKind::kInvariantViolation,
            "kv cache: retain() during an incomplete position");
    for (Vec32* buf : {&keys_[i], &values_[i]}) {
      std::size_t w = 0;
      for (std::size_t s : slots) {
        if (s != w) std::copy_n(buf->begin() + static_cast<std::ptrdiff_t>(s * d_), d_,
                                buf->begin() + static_cast<std::ptrdiff_t>(w * d_));
        ++w;
      }
      buf->resize(w * d_);
    }
    for (Vec32& col : key_cols_[i]) {
      std::size_t w = 0;
      for (std::size_t s : slots) col[w++] = col[s];
      col.resize(w);
    }
  }
  positions_.assign(keep.begin(), keep.end());
}

}  // namespace topo
