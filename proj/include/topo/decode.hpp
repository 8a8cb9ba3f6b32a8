// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

// Greedy decoding with pillar (dense) and sparse layers, spike tracking,
// persistent positions, optional eviction and op counting.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "topo/condensate.hpp"
#include "topo/forward.hpp"
#include "topo/kv_cache.hpp"
#include "topo/model.hpp"

namespace topo {

/// Multiply-accumulates per cached key per head dimension: one for the score, one for the value.
inline constexpr std::uint64_t kOpsPerKeyDim = 2;

/// Position -> number of (step, head) pairs in which it ranked in a pillar head's top k_spike.
class SpikeTracker {
 public:
  /// Returns the updated count.
  std::size_t record(std::size_t pos);
  std::size_t count(std::size_t pos) const;
  const std::map<std::size_t, std::size_t>& counts() const noexcept { return counts_; }

 private:
  std::map<std::size_t, std::size_t> counts_;
};

struct LayerDiagnostics {
  bool pillar = false;
  std::size_t set_size = 0;  // keys attended, largest over heads
  std::optional<bool> ulp_exact;  // sparse layers with ULP diagnostics on
  std::uint64_t ops = 0;
};

struct StepDiagnostics {
  bool prefill = false;
  std::size_t step = 0;      // 0 for prefill, then 1, 2, ...
  std::size_t position = 0;  // position of the token fed in (last prompt position for prefill)
  TokenId token = 0;         // argmax produced by this step
  std::size_t length = 0;    // logical N after the step
  std::size_t resident = 0;  // cache slots after any eviction
  std::size_t window = 0;
  std::size_t persistent = 0;
  std::vector<LayerDiagnostics> layers;
  std::optional<double> condensate_mass;  // smallest over sparse heads, ULP diagnostics only
  std::uint64_t ops = 0;
  std::uint64_t ops_dense = 0;

  /// True when ULP diagnostics ran and every sparse layer was exact (vacuously with no sparse layer).
  bool ulp_exact() const;
};

/// One JSON object, no trailing newline. Schema documented in README.
std::string to_json(const StepDiagnostics& d);

struct GenerationResult {
  std::vector<TokenId> tokens;
  StepDiagnostics prefill;
  std::vector<StepDiagnostics> steps;  // steps[i] produced tokens[i + 1]
  std::uint64_t ops_actual = 0;        // decode steps only
  std::uint64_t ops_dense = 0;
};

/// JSON-lines: the prefill record, then one line per decode step.
std::string to_jsonl(const GenerationResult& r);

struct DecodeOptions {
  Retention retention = Retention::kFull;
  bool ulp_diagnostics = false;
};

/// One generation context. Not thread-safe; the model is shared read-only.
class DecodeSession {
 public:
  DecodeSession(const Model& model, CondensateConfig cfg, DecodeOptions opts = {});
  ~DecodeSession();
  DecodeSession(const DecodeSession&) = delete;
  DecodeSession& operator=(const DecodeSession&) = delete;

  /// Dense forward over the prompt; returns argmax of the last logits.
  TokenId prefill(std::span<const TokenId> prompt);
  /// Feeds `prev` at the next position; returns the argmax of the new logits.
  TokenId step(TokenId prev);

  const Vec32& logits() const noexcept { return logits_; }
  /// Final residual stream of the latest position.
  const Vec32& hidden() const;
  const StepDiagnostics& diagnostics() const noexcept { return diag_; }

  const KVCache& cache() const noexcept { return cache_; }
  const SpikeTracker& tracker() const noexcept { return tracker_; }
  const PersistentSet& persistent() const noexcept { return persistent_; }
  const CondensateConfig& config() const noexcept { return cfg_; }
  std::span<const TokenId> history() const noexcept { return history_; }
  /// Condensate sets used by each query head of `layer` in the latest step (empty for pillars).
  const std::vector<CondensateSet>& sets(std::size_t layer) const;

  /// Drops positions outside {0} ∪ last w_max ∪ persistent. Evict mode only;
  /// step() and prefill() already call it.
  void evict();

 private:
  class Router;
  friend class Router;

  std::size_t current_window() const;
  void finish(StepDiagnostics& d);

  const Model& model_;
  CondensateConfig cfg_;
  DecodeOptions opts_;
  Forward fwd_;
  KVCache cache_;
  SpikeTracker tracker_;
  PersistentSet persistent_;
  std::vector<TokenId> history_;
  std::vector<std::vector<KeyNormIndex>> norm_index_;  // [layer][kv head], sparse layers only
  std::vector<std::vector<CondensateSet>> sets_;       // [layer][query head]
  std::unique_ptr<Router> router_;
  Vec32 logits_;
  StepDiagnostics diag_;
  std::size_t steps_ = 0;
  bool index_stale_ = false;  // set by eviction, cleared after the next sparse pass
};

/// Prefill, then greedy decoding until EOS or `max_tokens` tokens.
GenerationResult generate(const Model& model, std::span<const TokenId> prompt, const CondensateConfig& cfg,
                          std::size_t max_tokens, const DecodeOptions& opts = {});

/// c * L * H * N * d.
std::uint64_t dense_step_ops(const ModelSpec& spec, std::size_t n);
/// Sum of dense_step_ops over prompt positions 1..m.
std::uint64_t prefill_ops(const ModelSpec& spec, std::size_t m);

}  // namespace topo
