// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

// Experiments comparing sparse decoding against the dense oracle: token
// agreement, hidden-state cosine, ULP census, needle retrieval, mass census.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "topo/condensate.hpp"
#include "topo/decode.hpp"
#include "topo/model.hpp"

namespace topo {

/// Largest sequence length the dense oracle is run at.
inline constexpr std::size_t kOracleCap = 4096;

struct EquivalenceOptions {
  std::size_t steps_per_prompt = 100;
  bool ulp_diagnostics = true;
  Retention retention = Retention::kFull;
  std::size_t oracle_cap = kOracleCap;
};

struct EquivalenceReport {
  bool oracle_feasible = true;
  std::string infeasible_reason;
  std::size_t tokens_compared = 0;
  double top1_match = 0.0;
  double top5_match = 0.0;
  double min_cosine = 1.0;
  double mean_cosine = 1.0;
  double min_condensate_mass = 1.0;  // over steps with ULP diagnostics
  double mean_condensate_mass = 1.0;
  double ulp_exact_fraction = 0.0;
  std::size_t ulp_exact_steps = 0;
  /// ulp-exact steps whose logits or final hidden state differ from the oracle in any bit.
  std::size_t ulp_unsound_steps = 0;
  /// Steps where logits and final hidden state were bit-identical to the oracle.
  std::size_t bit_identical_steps = 0;
  std::size_t max_set_size = 0;  // sparse layers only
};

/// Indices of the k largest values, ties to the lower index, in rank order.
std::vector<std::size_t> top_indices(std::span<const float> v, std::size_t k);

/// f64 cosine similarity; 1 when both vectors are zero.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Teacher-forced lockstep: after a shared prefill both engines are fed the
/// oracle's greedy token at every step. Returns an infeasible report (not an
/// exception) when a prompt plus its steps exceeds the oracle cap.
EquivalenceReport run_equivalence(const Model& model, const std::vector<std::vector<TokenId>>& prompts,
                                  const CondensateConfig& cfg, const EquivalenceOptions& opts = {});

std::string to_json(const EquivalenceReport& r);
/// Three-metric table: token match, cosine, mass coverage.
std::string to_table(const EquivalenceReport& r);

// ---------------------------------------------------------------------------

struct NeedleHit {
  std::size_t position = 0;
  bool in_window = false;
  bool found = false;           // position in the condensate set of the answering query
  bool answer_correct = false;  // retrieved value (cache mode) or generated token (model mode)
};

struct NeedleReport {
  std::string mode;  // "synthetic-cache" or "model"
  std::size_t n = 0;
  Selector selector = Selector::kScores;
  std::size_t window = 0;
  std::size_t topk = 0;
  std::size_t set_size = 0;  // largest set used
  std::vector<NeedleHit> needles;

  std::size_t found() const;
  std::size_t correct() const;
};

struct NeedleCacheSpec {
  std::size_t n = 1024;
  std::size_t needles = 4;  // at most kFactSlots
  std::size_t head_dim = 64;
  std::uint64_t seed = 1;
  float needle_gain = 128.0f;    // probe . needle key, before the 1/sqrt(d) scale
  float background = 0.25f;      // bound on every background key and query component
  std::size_t memory_budget_bytes = std::size_t{1} << 30;
};

/// Needle positions for a suite: spread over the body, last one inside the window.
std::vector<std::size_t> needle_positions(std::size_t n, std::size_t needles, std::size_t window);

/// Keys and values built directly: background components in [-b, b], needle
/// keys carry `needle_gain` on their slot's dimension, probes query it.
NeedleReport run_needle_cache(const NeedleCacheSpec& spec, const CondensateConfig& cfg);

/// Plants facts in filler, prefills up to the question token, then decodes it
/// through the sparse engine.
NeedleReport run_needle_model(const Model& model, std::size_t n, std::size_t needles, const CondensateConfig& cfg,
                              std::uint64_t seed = 0);

std::string to_json(const NeedleReport& r);
std::string to_table(const NeedleReport& r);

// ---------------------------------------------------------------------------

struct RegionMass {
  double anchor = 0.0;
  double window = 0.0;
  double dynamic = 0.0;
  double middle = 0.0;
  double condensate() const { return anchor + window + dynamic; }
};

struct MassCensus {
  std::size_t layer = 0;
  std::size_t query_pos = 0;
  std::size_t n = 0;
  std::size_t set_size = 0;  // largest over heads
  std::vector<RegionMass> heads;
  RegionMass mean;
};

/// Dense forward over prompt[0..query_pos], then the f64 softmax of every head
/// of `layer` at the query split into anchor / window / score top-k / middle.
MassCensus mass_census(const Model& model, std::span<const TokenId> prompt, std::size_t layer, std::size_t query_pos,
                       const CondensateConfig& cfg);

std::string to_json(const MassCensus& m);
std::string to_table(const MassCensus& m);

}  // namespace topo
