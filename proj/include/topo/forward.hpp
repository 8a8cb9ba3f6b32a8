// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

// Transformer block: pre-norm attention and GELU MLP, both residual. Attention
// itself is delegated to a router so dense and sparse decoding share the rest.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "topo/attention.hpp"
#include "topo/kv_cache.hpp"
#include "topo/model.hpp"

namespace topo {

class AttentionRouter {
 public:
  virtual ~AttentionRouter() = default;
  /// `q` holds every query head (post-RoPE) for the current position, whose
  /// k/v are already cached. Writes concatenated head outputs to `out`.
  virtual void attend(std::size_t layer, std::span<const float> q, const KVCache& cache, std::span<float> out) = 0;
};

/// Full attention over every resident slot. Optionally records the per-head
/// rows of one layer.
class DenseRouter : public AttentionRouter {
 public:
  explicit DenseRouter(const ModelSpec& spec) : spec_(spec) {}
  void capture_layer(std::optional<std::size_t> layer) { capture_ = layer; }
  const std::vector<AttentionRow>& captured() const noexcept { return rows_; }
  void attend(std::size_t layer, std::span<const float> q, const KVCache& cache, std::span<float> out) override;

 private:
  ModelSpec spec_;
  std::optional<std::size_t> capture_;
  std::vector<AttentionRow> rows_;
};

class Forward {
 public:
  explicit Forward(const Model& model);
  const Model& model() const noexcept { return model_; }

  /// Runs `token` at position cache.length(), appending its k/v in every layer.
  /// `logits` (vocab) and `last_attn` (concatenated last-layer head outputs) are
  /// filled when non-null.
  void step(TokenId token, KVCache& cache, AttentionRouter& router, Vec32* logits, Vec32* last_attn = nullptr);
  /// Residual stream after the last block of the latest step, before the final norm.
  const Vec32& hidden() const noexcept { return x_; }

 private:
  void norm(std::span<const float> x, const Vec32& gain, const Vec32& bias, std::span<float> out) const;

  struct Packed {
    Mat32 w_q, w_k, w_v, w_o, mlp_in, mlp_out;
  };

  const Model& model_;
  std::vector<Packed> packed_;  // transposed layer weights
  Mat32 lm_head_t_;
  Vec32 x_, h_, q_, k_, v_, attn_, proj_, mlp_;
};

struct ForwardResult {
  KVCache cache;
  std::vector<Vec32> logits;            // one per position, or only the last
  std::vector<AttentionRow> rows;       // per head, when capture requested
};

struct ForwardOptions {
  bool all_logits = false;
  std::optional<std::size_t> capture_layer;  // rows at the final position
};

/// Dense forward pass over `tokens` into a fresh full-retention cache.
ForwardResult full_forward(const Model& model, std::span<const TokenId> tokens, const ForwardOptions& opts = {});

}  // namespace topo
