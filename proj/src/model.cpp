// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "json.hpp"
#include "topo/forward.hpp"

namespace topo {
namespace {

// splitmix64; std distributions are not bit-portable across standard libraries.
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  // Uniform in [-scale, scale], 24-bit resolution.
  float uniform(float scale) {
    const float u = static_cast<float>(next() >> 40) * (1.0f / 16777216.0f);
    return (2.0f * u - 1.0f) * scale;
  }

 private:
  std::uint64_t state_;
};

constexpr float kInitScale = 0.08f;

// Residual-stream dims reserved by the concentrated construction.
constexpr std::size_t kResBos = 0;
constexpr std::size_t kResOne = 1;
constexpr std::size_t kResCount = 2;
constexpr std::size_t kResProbe = 3;                        // + slot
constexpr std::size_t kResNeedle = kResProbe + kFactSlots;   // + slot
constexpr std::size_t kResAnswer = kResNeedle + kFactSlots;  // + slot
constexpr std::size_t kResContent = kResAnswer + kFactSlots;

// Per-head value dims: the BOS flag, needle identity per slot, and the ONE
// channel (read back by calibration, never written to the residual).
constexpr std::size_t kValSink = 0;
constexpr std::size_t kValNeedle = 1;
constexpr std::size_t kValOne = kValNeedle + kFactSlots;
constexpr std::size_t kValUsed = kValOne + 1;

constexpr float kBosFlag = 8.0f;
constexpr float kKeyGain = 4.0f;
// Absolute-position feature carried by the position embedding. It sits at this
// scale in the residual so that it barely moves the RMS normalisation of other dims.
constexpr float kCountScale = 1.0e-3f;
// Broad head: sink logit = kBroadBase + kBroadSlope * (g(127) - g(i)), where
// g is the position signal (about one unit per 4x of context).
constexpr float kBroadBase = 6.0f;
constexpr float kBroadSlope = 4.0f;
constexpr std::size_t kCalibrationLen = 160;

// Key dims live in the slowest RoPE pairs so that relative rotation over desk
// distances barely moves them.
std::size_t sink_key_dim(std::size_t d) { return d - 2; }
std::size_t needle_key_dim(std::size_t d, std::size_t slot) {
  static constexpr std::size_t kOffsets[kFactSlots] = {1, 4, 3, 6, 5, 8, 7, 10};
  return d - kOffsets[slot];
}

Mat32 random_mat(SplitMix& rng, std::size_t rows, std::size_t cols) {
  Mat32 m(rows, cols);
  for (float& v : m.data()) v = rng.uniform(kInitScale);
  return m;
}

Model random_model(const ModelSpec& spec, std::uint64_t seed) {
  SplitMix rng(seed);
  const std::size_t dm = spec.model_dim;
  Model m;
  m.spec = spec;
  m.embedding = random_mat(rng, spec.vocab_size, dm);
  m.layers.resize(spec.n_layers);
  for (auto& lw : m.layers) {
    lw.w_q = random_mat(rng, spec.q_dim(), dm);
    lw.w_k = random_mat(rng, spec.kv_dim(), dm);
    lw.w_v = random_mat(rng, spec.kv_dim(), dm);
    lw.w_o = random_mat(rng, dm, spec.q_dim());
    lw.mlp_in = random_mat(rng, spec.mlp_dim, dm);
    lw.mlp_out = random_mat(rng, dm, spec.mlp_dim);
    lw.norm1.assign(dm, 1.0f);
    lw.norm2.assign(dm, 1.0f);
  }
  m.final_norm.assign(dm, 1.0f);
  m.lm_head = random_mat(rng, spec.vocab_size, dm);
  return m;
}

void zero_row(Mat32& m, std::size_t r) { std::fill(m.row(r).begin(), m.row(r).end(), 0.0f); }
void zero_col(Mat32& m, std::size_t c) {
  for (std::size_t r = 0; r < m.rows(); ++r) m.at(r, c) = 0.0f;
}

// Smooth, roughly logarithmic position signal: a sum of A / (A + i) terms.
double position_signal(double i) {
  double g = 0.0;
  for (double a = 16.0; a <= 16.0 * 1024.0; a *= 4.0) g += a / (a + i);
  return g;
}

enum class HeadRole { kBroad, kSink, kRetrieval };

HeadRole head_role(const ModelSpec& spec, std::size_t layer, std::size_t head) {
  if (layer == 0) return HeadRole::kSink;
  if (spec.n_layers >= 2 && layer == spec.n_layers / 2 && head == 0) return HeadRole::kBroad;
  return HeadRole::kRetrieval;
}

// Structural weights. Query gains are left at 1 and rescaled by calibrate().
void shape_concentrated(Model& m) {
  const ModelSpec& spec = m.spec;
  const std::size_t d = spec.head_dim;

  for (std::size_t c = 0; c < kResContent; ++c) zero_col(m.embedding, c);
  for (std::size_t t = 0; t < spec.vocab_size; ++t) m.embedding.at(t, kResOne) = 1.0f;
  m.embedding.at(static_cast<std::size_t>(spec.bos_token), kResBos) = kBosFlag;
  for (std::size_t s = 0; s < kFactSlots; ++s) {
    m.embedding.at(static_cast<std::size_t>(probe_token(spec, s)), kResProbe + s) = 1.0f;
    m.embedding.at(static_cast<std::size_t>(needle_token(spec, s)), kResNeedle + s) = 1.0f;
  }

  m.pos_embedding = Mat32(spec.max_seq, spec.model_dim);
  for (std::size_t i = 0; i < spec.max_seq; ++i) {
    m.pos_embedding.at(i, kResCount) = kCountScale * static_cast<float>(position_signal(static_cast<double>(i)));
  }

  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    LayerWeights& lw = m.layers[l];
    for (std::size_t r = 0; r < kResContent; ++r) {
      zero_row(lw.w_o, r);
      zero_row(lw.mlp_out, r);
    }
    for (std::size_t c = 0; c < kResContent; ++c) {
      zero_col(lw.w_q, c);
      zero_col(lw.w_k, c);
      zero_col(lw.w_v, c);
    }
    for (std::size_t kv = 0; kv < spec.n_kv_heads; ++kv) {
      const std::size_t base = kv * d;
      zero_row(lw.w_k, base + sink_key_dim(d));
      lw.w_k.at(base + sink_key_dim(d), kResBos) = kKeyGain;
      for (std::size_t s = 0; s < kFactSlots; ++s) {
        zero_row(lw.w_k, base + needle_key_dim(d, s));
        lw.w_k.at(base + needle_key_dim(d, s), kResNeedle + s) = kKeyGain;
        zero_row(lw.w_v, base + kValNeedle + s);
        lw.w_v.at(base + kValNeedle + s, kResNeedle + s) = 1.0f;
      }
      zero_row(lw.w_v, base + kValSink);
      lw.w_v.at(base + kValSink, kResBos) = 1.0f;
      zero_row(lw.w_v, base + kValOne);
      lw.w_v.at(base + kValOne, kResOne) = 1.0f;
    }
    // Layers 0 and L/2 (the default dense layers) get structure-only queries:
    // every score off the anchor and needles is exactly 0.
    const bool plain_query = l == 0 || l == spec.n_layers / 2;
    for (std::size_t h = 0; h < spec.n_heads; ++h) {
      const std::size_t base = h * d;
      if (plain_query) {
        for (std::size_t r = 0; r < d; ++r) zero_row(lw.w_q, base + r);
      }
      zero_row(lw.w_q, base + sink_key_dim(d));
      for (std::size_t s = 0; s < kFactSlots; ++s) zero_row(lw.w_q, base + needle_key_dim(d, s));
      for (std::size_t v = 0; v < kValUsed; ++v) zero_col(lw.w_o, base + v);

      switch (head_role(spec, l, h)) {
        case HeadRole::kBroad:
          // Weak anchor pull that strengthens with context; output discarded.
          for (std::size_t r = 0; r < d; ++r) zero_row(lw.w_q, base + r);
          for (std::size_t r = 0; r < spec.model_dim; ++r) {
            for (std::size_t c = 0; c < d; ++c) lw.w_o.at(r, base + c) = 0.0f;
          }
          break;
        case HeadRole::kSink:
          lw.w_q.at(base + sink_key_dim(d), kResOne) = 1.0f;
          break;
        case HeadRole::kRetrieval:
          lw.w_q.at(base + sink_key_dim(d), kResOne) = 1.0f;
          for (std::size_t s = 0; s < kFactSlots; ++s) {
            lw.w_q.at(base + needle_key_dim(d, s), kResProbe + s) = 1.0f;
            lw.w_o.at(kResAnswer + s, base + kValNeedle + s) = 4.0f;
          }
          break;
      }
    }
  }

  for (std::size_t t = 0; t < spec.vocab_size; ++t) {
    for (std::size_t c = 0; c < kResContent; ++c) {
      if (c != kResOne) m.lm_head.at(t, c) = 0.0f;
    }
  }
  for (std::size_t s = 0; s < kFactSlots; ++s) {
    m.lm_head.at(static_cast<std::size_t>(needle_token(spec, s)), kResAnswer + s) = 8.0f;
    m.lm_head.at(static_cast<std::size_t>(probe_token(spec, s)), kResOne) = -8.0f;
  }
  m.lm_head.at(static_cast<std::size_t>(spec.bos_token), kResOne) = -8.0f;
  m.lm_head.at(static_cast<std::size_t>(spec.eos_token), kResOne) = -8.0f;
}

// Sets query gains so that scores hit their targets in logits. Sharp heads put
// all their weight on the anchor whatever the exact gain, so the residual
// stream measured here is the one the final model produces.
void calibrate(Model& m, const SynthRecipe& recipe) {
  const ModelSpec& spec = m.spec;
  const std::size_t d = spec.head_dim;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  ModelSpec cal_spec = spec;
  cal_spec.rope_enabled = false;
  Model probe_model = m;
  probe_model.spec = cal_spec;
  const auto prompt = filler_prompt(cal_spec, std::min(kCalibrationLen, spec.max_seq), recipe.seed);
  const ForwardResult fr = full_forward(probe_model, prompt);

  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    LayerWeights& lw = m.layers[l];
    const RowsView vals = fr.cache.values(l, 0);
    const float bos = vals.row(0)[kValSink];
    double acc = 0.0;
    const std::size_t from = prompt.size() / 2;
    for (std::size_t j = from; j < prompt.size(); ++j) acc += vals.row(j)[kValOne];
    const float one = static_cast<float>(acc / static_cast<double>(prompt.size() - from));
    const float sink_key = kKeyGain * bos;

    for (std::size_t h = 0; h < spec.n_heads; ++h) {
      const std::size_t base = h * d;
      const std::size_t qs = base + sink_key_dim(d);
      switch (head_role(spec, l, h)) {
        case HeadRole::kBroad: {
          // score = (mu * one - lambda * count) * sink_key * scale, and
          // count / one = kCountScale * g in the raw residual.
          const double g_ref = position_signal(127.0);
          const double mu = kBroadBase + kBroadSlope * g_ref;
          const float unit = one * sink_key * scale;
          lw.w_q.at(qs, kResOne) = static_cast<float>(mu / unit);
          lw.w_q.at(qs, kResCount) = static_cast<float>(-kBroadSlope / (kCountScale * unit));
          break;
        }
        case HeadRole::kSink:
          lw.w_q.at(qs, kResOne) = recipe.sink_strength / (one * sink_key * scale);
          break;
        case HeadRole::kRetrieval: {
          lw.w_q.at(qs, kResOne) = recipe.sink_strength / (one * sink_key * scale);
          // Probe flags sit at the same raw magnitude as ONE.
          const float probe_score = 3.0f * recipe.sink_strength + recipe.needle_gain;
          for (std::size_t s = 0; s < kFactSlots; ++s) {
            lw.w_q.at(base + needle_key_dim(d, s), kResProbe + s) = probe_score / (one * kKeyGain * one * scale);
          }
          break;
        }
      }
    }
  }
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t hash_floats(std::uint64_t h, const std::vector<float>& v) {
  return fnv1a(h, v.data(), v.size() * sizeof(float));
}

void check_shape(const Mat32& m, std::size_t rows, std::size_t cols, const std::string& name) {
  require(m.rows() == rows && m.cols() == cols, ErrorKind::kShapeMismatch,
          name + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
              std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

void check_len(const Vec32& v, std::size_t n, bool optional, const std::string& name) {
  if (optional && v.empty()) return;
  require(v.size() == n, ErrorKind::kShapeMismatch,
          name + ": expected length " + std::to_string(n) + ", got " + std::to_string(v.size()));
}

}  // namespace

void validate(const ModelSpec& s) {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorKind::kInvalidArgument, "spec." + field + ": " + why);
  };
  if (s.n_layers < 1) bad("n_layers", "must be >= 1");
  if (s.n_heads < 1) bad("n_heads", "must be >= 1");
  if (s.n_kv_heads < 1 || s.n_heads % s.n_kv_heads != 0) bad("n_kv_heads", "must divide n_heads");
  if (s.head_dim < 1) bad("head_dim", "must be >= 1");
  if (s.rope_enabled && s.head_dim % 2 != 0) bad("head_dim", "must be even with rope");
  if (s.model_dim < 1) bad("model_dim", "must be >= 1");
  if (s.mlp_dim < 1) bad("mlp_dim", "must be >= 1");
  if (s.vocab_size < 2) bad("vocab_size", "must be >= 2");
  if (s.max_seq < 1) bad("max_seq", "must be >= 1");
  if (s.bos_token < 0 || static_cast<std::size_t>(s.bos_token) >= s.vocab_size) bad("bos_token", "out of vocab");
  if (s.eos_token < 0 || static_cast<std::size_t>(s.eos_token) >= s.vocab_size) bad("eos_token", "out of vocab");
  if (!(s.rope_theta > 0.0f)) bad("rope_theta", "must be positive");
}

void validate(const Model& m) {
  const ModelSpec& s = m.spec;
  validate(s);
  check_shape(m.embedding, s.vocab_size, s.model_dim, "embedding");
  if (!m.pos_embedding.empty()) check_shape(m.pos_embedding, s.max_seq, s.model_dim, "pos_embedding");
  require(m.layers.size() == s.n_layers, ErrorKind::kShapeMismatch,
          "layers: expected " + std::to_string(s.n_layers) + ", got " + std::to_string(m.layers.size()));
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const LayerWeights& w = m.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    check_shape(w.w_q, s.q_dim(), s.model_dim, p + "w_q");
    check_shape(w.w_k, s.kv_dim(), s.model_dim, p + "w_k");
    check_shape(w.w_v, s.kv_dim(), s.model_dim, p + "w_v");
    check_shape(w.w_o, s.model_dim, s.q_dim(), p + "w_o");
    check_shape(w.mlp_in, s.mlp_dim, s.model_dim, p + "mlp_in");
    check_shape(w.mlp_out, s.model_dim, s.mlp_dim, p + "mlp_out");
    check_len(w.norm1, s.model_dim, false, p + "norm1");
    check_len(w.norm2, s.model_dim, false, p + "norm2");
    check_len(w.norm1_bias, s.model_dim, true, p + "norm1_bias");
    check_len(w.norm2_bias, s.model_dim, true, p + "norm2_bias");
    check_len(w.b_q, s.q_dim(), true, p + "b_q");
    check_len(w.b_k, s.kv_dim(), true, p + "b_k");
    check_len(w.b_v, s.kv_dim(), true, p + "b_v");
    check_len(w.b_o, s.model_dim, true, p + "b_o");
    check_len(w.b_mlp_in, s.mlp_dim, true, p + "b_mlp_in");
    check_len(w.b_mlp_out, s.model_dim, true, p + "b_mlp_out");
  }
  check_len(m.final_norm, s.model_dim, false, "final_norm");
  check_len(m.final_norm_bias, s.model_dim, true, "final_norm_bias");
  check_shape(m.lm_head, s.vocab_size, s.model_dim, "lm_head");
}

std::uint64_t model_hash(const Model& m) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  const ModelSpec& s = m.spec;
  const std::uint64_t fields[] = {s.n_layers, s.n_heads,  s.n_kv_heads, s.head_dim,
                                  s.model_dim, s.mlp_dim, s.vocab_size, s.max_seq};
  h = fnv1a(h, fields, sizeof(fields));
  h = hash_floats(h, m.embedding.data());
  h = hash_floats(h, m.pos_embedding.data());
  for (const auto& w : m.layers) {
    for (const Mat32* t : {&w.w_q, &w.w_k, &w.w_v, &w.w_o, &w.mlp_in, &w.mlp_out}) h = hash_floats(h, t->data());
    for (const Vec32* v : {&w.norm1, &w.norm2, &w.b_q, &w.b_k, &w.b_v, &w.b_o, &w.b_mlp_in, &w.b_mlp_out,
                           &w.norm1_bias, &w.norm2_bias}) {
      h = hash_floats(h, *v);
    }
  }
  h = hash_floats(h, m.final_norm);
  h = hash_floats(h, m.final_norm_bias);
  h = hash_floats(h, m.lm_head.data());
  return h;
}

TokenId probe_token(const ModelSpec& spec, std::size_t slot) {
  require(slot < kFactSlots, ErrorKind::kInvalidArgument, "fact slot out of range");
  return static_cast<TokenId>(spec.vocab_size - 2 * kFactSlots + slot);
}

TokenId needle_token(const ModelSpec& spec, std::size_t slot) {
  require(slot < kFactSlots, ErrorKind::kInvalidArgument, "fact slot out of range");
  return static_cast<TokenId>(spec.vocab_size - kFactSlots + slot);
}

TokenId filler_begin(const ModelSpec&) { return 2; }
TokenId filler_end(const ModelSpec& spec) { return static_cast<TokenId>(spec.vocab_size - 2 * kFactSlots); }

ModelSpec desk_spec(std::size_t n_kv_heads, bool rope) {
  ModelSpec s;
  s.n_layers = 4;
  s.n_heads = 8;
  s.n_kv_heads = n_kv_heads;
  s.head_dim = 32;
  s.model_dim = 128;
  s.mlp_dim = 256;
  s.vocab_size = 512;
  s.max_seq = 16384;
  s.rope_enabled = rope;
  s.rope_theta = 1.0e6f;
  return s;
}

Model synth_model(const ModelSpec& spec, const SynthRecipe& recipe) {
  validate(spec);
  for (std::size_t p : recipe.needle_positions) {
    require(p < spec.max_seq, ErrorKind::kInvalidArgument,
            "recipe.needle_positions: " + std::to_string(p) + " >= max_seq");
  }
  require(recipe.needle_gain >= 0.0f, ErrorKind::kInvalidArgument, "recipe.needle_gain: must be >= 0");
  Model m = random_model(spec, recipe.seed);
  if (recipe.kind == SynthKind::kConcentrated) {
    require(spec.model_dim >= kResContent + 8, ErrorKind::kInvalidArgument,
            "spec.model_dim: concentrated construction needs >= " + std::to_string(kResContent + 8));
    require(spec.head_dim >= 16, ErrorKind::kInvalidArgument, "spec.head_dim: concentrated construction needs >= 16");
    require(spec.vocab_size > 2 * kFactSlots + 2, ErrorKind::kInvalidArgument, "spec.vocab_size: too small");
    require(recipe.sink_strength > 0.0f, ErrorKind::kInvalidArgument, "recipe.sink_strength: must be > 0");
    shape_concentrated(m);
    // The first pass starts from unit gains; the second measures the sharpened model.
    calibrate(m, recipe);
    calibrate(m, recipe);
  }
  return m;
}

Fact slot_fact(const ModelSpec& spec, std::size_t slot) {
  return Fact{{probe_token(spec, slot)}, {needle_token(spec, slot)}};
}

std::vector<TokenId> filler_prompt(const ModelSpec& spec, std::size_t len, std::uint64_t seed) {
  std::vector<TokenId> out;
  if (len == 0) return out;
  out.reserve(len);
  out.push_back(spec.bos_token);
  SplitMix rng(seed ^ 0x5EEDF111E4ULL);
  const auto lo = static_cast<std::uint64_t>(filler_begin(spec));
  const auto span = static_cast<std::uint64_t>(filler_end(spec) - filler_begin(spec));
  while (out.size() < len) out.push_back(static_cast<TokenId>(lo + rng.next() % span));
  return out;
}

NeedlePrompt plant_needle_prompt(const ModelSpec& spec, const std::vector<Fact>& facts, std::size_t total_len,
                                 std::size_t question_index, std::uint64_t filler_seed) {
  require(total_len <= spec.max_seq, ErrorKind::kSequenceOverflow,
          "needle prompt of " + std::to_string(total_len) + " tokens exceeds max_seq " + std::to_string(spec.max_seq));
  NeedlePrompt out;
  out.tokens = filler_prompt(spec, total_len, filler_seed);
  if (facts.empty()) return out;
  require(question_index < facts.size(), ErrorKind::kInvalidArgument, "question_index out of range");

  const std::vector<TokenId>& question = facts[question_index].key;
  std::size_t fact_tokens = 0;
  for (const Fact& f : facts) {
    require(!f.value.empty(), ErrorKind::kInvalidArgument, "fact with empty value");
    fact_tokens += f.key.size() + f.value.size();
  }
  require(1 + fact_tokens + question.size() <= total_len, ErrorKind::kSequenceOverflow,
          "facts and question do not fit in " + std::to_string(total_len) + " tokens");

  // Facts are centred in equal segments of the body between BOS and the question.
  const std::size_t body_begin = 1;
  const std::size_t body_end = total_len - question.size();
  const std::size_t n = facts.size();
  std::size_t cursor = body_begin;
  for (std::size_t i = 0; i < n; ++i) {
    const Fact& f = facts[i];
    const std::size_t len = f.key.size() + f.value.size();
    const std::size_t seg_lo = body_begin + (body_end - body_begin) * i / n;
    const std::size_t seg_hi = body_begin + (body_end - body_begin) * (i + 1) / n;
    std::size_t start = seg_lo + (seg_hi - seg_lo) / 2;
    start = std::max(start, cursor);
    start = std::min(start, body_end - len - (fact_tokens - len));
    std::copy(f.key.begin(), f.key.end(), out.tokens.begin() + static_cast<std::ptrdiff_t>(start));
    std::copy(f.value.begin(), f.value.end(),
              out.tokens.begin() + static_cast<std::ptrdiff_t>(start + f.key.size()));
    out.needle_positions.push_back(start + f.key.size());
    out.answers.push_back(f.value);
    cursor = start + len;
    fact_tokens -= len;
  }
  std::copy(question.begin(), question.end(), out.tokens.begin() + static_cast<std::ptrdiff_t>(body_end));
  out.question_index = question_index;
  out.expected_answer = facts[question_index].value;
  return out;
}

std::string needle_prompt_to_json(const NeedlePrompt& p) {
  nlohmann::ordered_json j;
  j["tokens"] = p.tokens;
  j["needles"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < p.needle_positions.size(); ++i) {
    j["needles"].push_back({{"pos", p.needle_positions[i]}, {"answer", p.answers[i]}});
  }
  if (!p.needle_positions.empty()) j["question"] = p.question_index;
  return j.dump();
}

NeedlePrompt needle_prompt_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("prompt json: ") + e.what());
  }
  require(j.is_object() && j.contains("tokens") && j["tokens"].is_array(), ErrorKind::kInvalidArgument,
          "prompt json: missing tokens array");
  NeedlePrompt p;
  try {
    p.tokens = j["tokens"].get<std::vector<TokenId>>();
    if (j.contains("needles")) {
      for (const auto& n : j["needles"]) {
        p.needle_positions.push_back(n.at("pos").get<std::size_t>());
        p.answers.push_back(n.at("answer").get<std::vector<TokenId>>());
      }
    }
    if (!p.answers.empty()) {
      p.question_index = j.value("question", std::size_t{0});
      require(p.question_index < p.answers.size(), ErrorKind::kInvalidArgument, "prompt json: question out of range");
      p.expected_answer = p.answers[p.question_index];
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, std::string("prompt json: ") + e.what());
  }
  return p;
}

}  // namespace topo
