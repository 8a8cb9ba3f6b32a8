// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/forward.hpp"

#include <string>

namespace topo {
namespace {

void add_bias(std::span<float> y, const Vec32& b) {
  if (b.empty()) return;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] + b[i];
}

void add_into(std::span<float> x, std::span<const float> y) {
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = x[i] + y[i];
}

}  // namespace

void DenseRouter::attend(std::size_t layer, std::span<const float> q, const KVCache& cache, std::span<float> out) {
  const std::size_t d = spec_.head_dim;
  const bool capture = capture_ && *capture_ == layer;
  if (capture) rows_.assign(spec_.n_heads, AttentionRow{});
  for (std::size_t h = 0; h < spec_.n_heads; ++h) {
    const std::size_t kv = spec_.kv_head_of(h);
    const KeyColumns cols = cache.key_columns(layer, kv);
    dense_attend_into(q.subspan(h * d, d), cache.keys(layer, kv), cache.values(layer, kv), out.subspan(h * d, d),
                      capture ? &rows_[h] : nullptr, &cols);
    if (capture) rows_[h].pos = cache.length() - 1;
  }
}

Forward::Forward(const Model& model) : model_(model) {
  validate(model);
  const ModelSpec& s = model.spec;
  for (const LayerWeights& w : model.layers) {
    packed_.push_back({transpose(w.w_q), transpose(w.w_k), transpose(w.w_v), transpose(w.w_o), transpose(w.mlp_in),
                       transpose(w.mlp_out)});
  }
  lm_head_t_ = transpose(model.lm_head);
  x_.resize(s.model_dim);
  h_.resize(s.model_dim);
  q_.resize(s.q_dim());
  k_.resize(s.kv_dim());
  v_.resize(s.kv_dim());
  attn_.resize(s.q_dim());
  proj_.resize(s.model_dim);
  mlp_.resize(s.mlp_dim);
}

void Forward::norm(std::span<const float> x, const Vec32& gain, const Vec32& bias, std::span<float> out) const {
  if (model_.spec.norm == NormKind::kLayer) {
    layer_norm(x, gain, bias, model_.spec.norm_eps, out);
  } else {
    rms_norm(x, gain, model_.spec.norm_eps, out);
  }
}

void Forward::step(TokenId token, KVCache& cache, AttentionRouter& router, Vec32* logits, Vec32* last_attn) {
  const ModelSpec& s = model_.spec;
  require(token >= 0 && static_cast<std::size_t>(token) < s.vocab_size, ErrorKind::kInvalidArgument,
          "token " + std::to_string(token) + " outside vocabulary");
  const std::size_t pos = cache.length();
  cache.open_position(s.max_seq);
  const std::size_t d = s.head_dim;

  const auto emb = model_.embedding.row(static_cast<std::size_t>(token));
  std::copy(emb.begin(), emb.end(), x_.begin());
  if (!model_.pos_embedding.empty()) add_into(x_, model_.pos_embedding.row(pos));

  for (std::size_t l = 0; l < s.n_layers; ++l) {
    const LayerWeights& w = model_.layers[l];
    const Packed& p = packed_[l];
    norm(x_, w.norm1, w.norm1_bias, h_);
    matvec_t_into(p.w_q, h_, q_);
    add_bias(q_, w.b_q);
    matvec_t_into(p.w_k, h_, k_);
    add_bias(k_, w.b_k);
    matvec_t_into(p.w_v, h_, v_);
    add_bias(v_, w.b_v);
    if (s.rope_enabled) {
      for (std::size_t h = 0; h < s.n_heads; ++h) rope_apply_inplace(std::span(q_).subspan(h * d, d), pos, s.rope_theta);
      for (std::size_t h = 0; h < s.n_kv_heads; ++h) rope_apply_inplace(std::span(k_).subspan(h * d, d), pos, s.rope_theta);
    }
    for (std::size_t h = 0; h < s.n_kv_heads; ++h) {
      cache.append(l, h, std::span(k_).subspan(h * d, d), std::span(v_).subspan(h * d, d));
    }
    router.attend(l, q_, cache, attn_);
    if (last_attn != nullptr && l + 1 == s.n_layers) *last_attn = attn_;
    matvec_t_into(p.w_o, attn_, proj_);
    add_bias(proj_, w.b_o);
    add_into(x_, proj_);

    norm(x_, w.norm2, w.norm2_bias, h_);
    matvec_t_into(p.mlp_in, h_, mlp_);
    add_bias(mlp_, w.b_mlp_in);
    gelu_inplace(mlp_);
    matvec_t_into(p.mlp_out, mlp_, proj_);
    add_bias(proj_, w.b_mlp_out);
    add_into(x_, proj_);
  }
  require(all_finite(x_), ErrorKind::kInvariantViolation, "non-finite hidden state at position " + std::to_string(pos));
  if (logits != nullptr) {
    norm(x_, model_.final_norm, model_.final_norm_bias, h_);
    logits->resize(s.vocab_size);
    matvec_t_into(lm_head_t_, h_, *logits);
  }
}

ForwardResult full_forward(const Model& model, std::span<const TokenId> tokens, const ForwardOptions& opts) {
  require(!tokens.empty(), ErrorKind::kEmptyInput, "full_forward: empty prompt");
  require(tokens.size() <= model.spec.max_seq, ErrorKind::kSequenceOverflow,
          "prompt of " + std::to_string(tokens.size()) + " tokens exceeds max_seq " +
              std::to_string(model.spec.max_seq));
  require(!opts.capture_layer || *opts.capture_layer < model.spec.n_layers, ErrorKind::kInvalidArgument,
          "capture layer " + std::to_string(opts.capture_layer.value_or(0)) + " out of range");
  ForwardResult res{KVCache(model.spec, Retention::kFull), {}, {}};
  Forward fwd(model);
  DenseRouter router(model.spec);
  Vec32 logits;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool last = i + 1 == tokens.size();
    router.capture_layer(last ? opts.capture_layer : std::nullopt);
    const bool want = last || opts.all_logits;
    fwd.step(tokens[i], res.cache, router, want ? &logits : nullptr);
    if (want) res.logits.push_back(logits);
  }
  if (opts.capture_layer) res.rows = router.captured();
  return res;
}

}  // namespace topo
