// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "topo/tensor.hpp"

namespace topo {

using TokenId = std::int32_t;

enum class NormKind { kRms, kLayer };

struct ModelSpec {
  std::size_t n_layers = 4;
  std::size_t n_heads = 8;
  std::size_t n_kv_heads = 8;
  std::size_t head_dim = 32;
  std::size_t model_dim = 128;
  std::size_t mlp_dim = 256;
  std::size_t vocab_size = 512;
  std::size_t max_seq = 16384;
  bool rope_enabled = false;
  float rope_theta = 10000.0f;
  TokenId bos_token = 0;
  TokenId eos_token = 1;
  NormKind norm = NormKind::kRms;
  float norm_eps = 1e-5f;

  std::size_t q_dim() const { return n_heads * head_dim; }
  std::size_t kv_dim() const { return n_kv_heads * head_dim; }
  std::size_t group_size() const { return n_heads / n_kv_heads; }
  /// GQA: query head h reads kv head h / (H / H_kv).
  std::size_t kv_head_of(std::size_t query_head) const { return query_head / group_size(); }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Throws kInvalidArgument naming the offending field.
void validate(const ModelSpec& spec);

// Optional tensors (biases, layer-norm shifts) are empty when the checkpoint has none.
struct LayerWeights {
  Mat32 w_q, w_k, w_v, w_o;
  Mat32 mlp_in, mlp_out;
  Vec32 norm1, norm2;
  Vec32 b_q, b_k, b_v, b_o, b_mlp_in, b_mlp_out;
  Vec32 norm1_bias, norm2_bias;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct Model {
  ModelSpec spec;
  Mat32 embedding;      // vocab x model_dim
  Mat32 pos_embedding;  // max_seq x model_dim, or empty
  std::vector<LayerWeights> layers;
  Vec32 final_norm;
  Vec32 final_norm_bias;
  Mat32 lm_head;  // vocab x model_dim

  friend bool operator==(const Model&, const Model&) = default;
};

/// Checks every tensor shape against the spec arithmetic.
void validate(const Model& model);

/// FNV-1a over the spec fields and raw tensor bytes.
std::uint64_t model_hash(const Model& model);

enum class SynthKind { kRandom, kConcentrated };

struct SynthRecipe {
  SynthKind kind = SynthKind::kConcentrated;
  float sink_strength = 60.0f;    // anchor score in sharp heads, in logits
  std::vector<std::size_t> needle_positions;
  float needle_gain = 60.0f;     // extra score a probe gives its needle over the sink
  std::uint64_t seed = 1;
};

// Vocabulary layout of synthetic models. Token 0 is BOS and 1 is EOS; the top
// 2 * kFactSlots ids are probe (question) and needle (answer) tokens.
inline constexpr std::size_t kFactSlots = 8;
TokenId probe_token(const ModelSpec& spec, std::size_t slot);
TokenId needle_token(const ModelSpec& spec, std::size_t slot);
TokenId filler_begin(const ModelSpec& spec);
TokenId filler_end(const ModelSpec& spec);

Model synth_model(const ModelSpec& spec, const SynthRecipe& recipe);

/// Desk-scale spec used by the synthetic experiments.
ModelSpec desk_spec(std::size_t n_kv_heads, bool rope);

struct Fact {
  std::vector<TokenId> key;
  std::vector<TokenId> value;
};

/// The canonical fact for a slot: key = probe token, value = needle token.
Fact slot_fact(const ModelSpec& spec, std::size_t slot);

struct NeedlePrompt {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> needle_positions;  // position of each fact's first value token
  std::vector<std::vector<TokenId>> answers;  // value tokens per fact
  std::vector<TokenId> expected_answer;       // answer to the trailing question
  std::size_t question_index = 0;
};

/// BOS + deterministic filler with facts spread evenly, closed by the question
/// fact's key tokens. `total_len` counts every token. With no facts the prompt
/// is pure filler and has no question.
NeedlePrompt plant_needle_prompt(const ModelSpec& spec, const std::vector<Fact>& facts, std::size_t total_len,
                                 std::size_t question_index, std::uint64_t filler_seed = 0);

/// BOS followed by `len - 1` deterministic filler tokens.
std::vector<TokenId> filler_prompt(const ModelSpec& spec, std::size_t len, std::uint64_t seed);

std::string needle_prompt_to_json(const NeedlePrompt& prompt);
NeedlePrompt needle_prompt_from_json(const std::string& text);

}  // namespace topo
