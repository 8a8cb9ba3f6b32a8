// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/attention.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace topo {
namespace {

void check_shapes(std::span<const float> q, RowsView keys, RowsView values) {
  require(keys.dim == q.size() && values.dim == q.size(), ErrorKind::kDimensionMismatch,
          "attention: head dims differ");
  require(keys.rows() == values.rows(), ErrorKind::kDimensionMismatch,
          "attention: " + std::to_string(keys.rows()) + " keys vs " + std::to_string(values.rows()) + " values");
  require(keys.rows() >= 1, ErrorKind::kEmptyInput, "attention over an empty cache");
}

// Scores for a list of key rows. Eight keys per block with one accumulator
// lane each; every lane sums its own dot product over ascending c, so the
// result per key equals the scalar loop while the compiler can vectorise across keys.
constexpr std::size_t kBlock = 8;

void block_scores(std::span<const float> q, const float* const* rows, std::size_t count, float scale, float* out) {
  const std::size_t d = q.size();
  std::size_t j = 0;
  for (; j + kBlock <= count; j += kBlock) {
    float acc[kBlock] = {};
    const float* const* r = rows + j;
    for (std::size_t c = 0; c < d; ++c) {
      const float qc = q[c];
      for (std::size_t l = 0; l < kBlock; ++l) acc[l] += qc * r[l][c];
    }
    for (std::size_t l = 0; l < kBlock; ++l) out[j + l] = acc[l] * scale;
  }
  for (; j < count; ++j) {
    float s = 0.0f;
    for (std::size_t c = 0; c < d; ++c) s += q[c] * rows[j][c];
    out[j] = s * scale;
  }
}

thread_local std::vector<const float*> t_rows;

void gather_scores(std::span<const float> q, RowsView keys, std::span<const std::size_t> slots, float scale,
                   float* out) {
  t_rows.resize(slots.size());
  for (std::size_t j = 0; j < slots.size(); ++j) t_rows[j] = keys.data.data() + slots[j] * keys.dim;
  block_scores(q, t_rows.data(), slots.size(), scale, out);
}

void all_scores(std::span<const float> q, RowsView keys, float scale, float* out) {
  const std::size_t n = keys.rows();
  t_rows.resize(n);
  for (std::size_t j = 0; j < n; ++j) t_rows[j] = keys.data.data() + j * keys.dim;
  block_scores(q, t_rows.data(), n, scale, out);
}

// Dimension-major keys: the inner loop runs over keys with one independent
// accumulator each, which vectorises without reordering any key's sum.
void column_scores(std::span<const float> q, const KeyColumns& cols, float scale, float* out) {
  const std::size_t n = cols.rows();
  std::fill(out, out + n, 0.0f);
  const std::size_t d = q.size();
  std::size_t c = 0;
  for (; c + 4 <= d; c += 4) {
    const float q0 = q[c], q1 = q[c + 1], q2 = q[c + 2], q3 = q[c + 3];
    const float* k0 = cols.cols[c].data();
    const float* k1 = cols.cols[c + 1].data();
    const float* k2 = cols.cols[c + 2].data();
    const float* k3 = cols.cols[c + 3].data();
    for (std::size_t j = 0; j < n; ++j) {
      float a = out[j];
      a += q0 * k0[j];
      a += q1 * k1[j];
      a += q2 * k2[j];
      a += q3 * k3[j];
      out[j] = a;
    }
  }
  for (; c < d; ++c) {
    const float qc = q[c];
    const float* col = cols.cols[c].data();
    for (std::size_t j = 0; j < n; ++j) out[j] += qc * col[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] = out[j] * scale;
}

// In-place softmax over s[0..n): exp(s - max), denominator summed ascending.
void softmax_inplace(float* s, std::size_t n) {
  float mx = s[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, s[j]);
  float denom = 0.0f;
  for (std::size_t j = 0; j < n; ++j) {
    s[j] = std::exp(s[j] - mx);
    denom += s[j];
  }
  for (std::size_t j = 0; j < n; ++j) s[j] = s[j] / denom;
}

void accumulate(const float* w, RowsView values, std::span<const std::size_t> slots, std::span<float> out) {
  const std::size_t d = out.size();
  const float* vd = values.data.data();
  std::fill(out.begin(), out.end(), 0.0f);
  float* o = out.data();
  for (std::size_t j = 0; j < slots.size(); ++j) {
    const float wj = w[j];
    const float* v = vd + slots[j] * d;
    for (std::size_t c = 0; c < d; ++c) o[c] += wj * v[c];
  }
}

void accumulate_all(const float* w, RowsView values, std::span<float> out) {
  const std::size_t d = out.size();
  const float* vd = values.data.data();
  std::fill(out.begin(), out.end(), 0.0f);
  float* o = out.data();
  const std::size_t n = values.rows();
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    const float w0 = w[j], w1 = w[j + 1], w2 = w[j + 2], w3 = w[j + 3];
    const float* v0 = vd + j * d;
    for (std::size_t c = 0; c < d; ++c) {
      float a = o[c];
      a += w0 * v0[c];
      a += w1 * v0[d + c];
      a += w2 * v0[2 * d + c];
      a += w3 * v0[3 * d + c];
      o[c] = a;
    }
  }
  for (; j < n; ++j) {
    const float wj = w[j];
    const float* v = vd + j * d;
    for (std::size_t c = 0; c < d; ++c) o[c] += wj * v[c];
  }
}

bool same_bits(float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); }

thread_local Vec32 t_scratch;

}  // namespace

float attention_scale(std::size_t head_dim) { return 1.0f / std::sqrt(static_cast<float>(head_dim)); }

void attention_scores(std::span<const float> q, RowsView keys, std::span<float> scores) {
  require(keys.dim == q.size(), ErrorKind::kDimensionMismatch, "attention_scores: head dim");
  require(scores.size() == keys.rows(), ErrorKind::kDimensionMismatch, "attention_scores: output length");
  all_scores(q, keys, attention_scale(q.size()), scores.data());
}

void dense_attend_into(std::span<const float> q, RowsView keys, RowsView values, std::span<float> out,
                       AttentionRow* row, const KeyColumns* columns) {
  check_shapes(q, keys, values);
  require(out.size() == q.size(), ErrorKind::kDimensionMismatch, "attention: output length");
  const std::size_t n = keys.rows();
  t_scratch.resize(n);
  float* s = t_scratch.data();
  if (columns != nullptr) {
    require(columns->cols.size() == q.size() && columns->rows() == n, ErrorKind::kDimensionMismatch,
            "attention: key columns disagree with key rows");
    column_scores(q, *columns, attention_scale(q.size()), s);
  } else {
    all_scores(q, keys, attention_scale(q.size()), s);
  }
  if (row != nullptr) row->scores.assign(s, s + n);
  softmax_inplace(s, n);
  if (row != nullptr) {
    row->weights.assign(s, s + n);
    row->pos = n - 1;
  }
  accumulate_all(s, values, out);
}

Vec32 dense_attend(std::span<const float> q, RowsView keys, RowsView values, AttentionRow* row) {
  Vec32 out(q.size());
  dense_attend_into(q, keys, values, out, row);
  return out;
}

void subset_attend_into(std::span<const float> q, RowsView keys, RowsView values, std::span<const std::size_t> slots,
                        std::span<float> out) {
  check_shapes(q, keys, values);
  require(!slots.empty(), ErrorKind::kEmptyInput, "attention over an empty position set");
  require(out.size() == q.size(), ErrorKind::kDimensionMismatch, "attention: output length");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    require(slots[i] < keys.rows() && (i == 0 || slots[i] > slots[i - 1]), ErrorKind::kInvalidArgument,
            "attention: slots must be ascending and in range");
  }
  t_scratch.resize(slots.size());
  float* s = t_scratch.data();
  gather_scores(q, keys, slots, attention_scale(q.size()), s);
  softmax_inplace(s, slots.size());
  accumulate(s, values, slots, out);
}

UlpReport ulp_check(std::span<const float> q, RowsView keys, RowsView values, std::span<const std::size_t> slots) {
  check_shapes(q, keys, values);
  require(!slots.empty(), ErrorKind::kEmptyInput, "ulp_check: empty position set");
  const std::size_t n = keys.rows();
  const std::size_t d = q.size();
  Vec32 s(n);
  all_scores(q, keys, attention_scale(d), s.data());
  std::vector<char> in_set(n, 0);
  for (std::size_t slot : slots) in_set[slot] = 1;

  float m_all = s[0];
  for (std::size_t j = 1; j < n; ++j) m_all = std::max(m_all, s[j]);
  float m_set = s[slots[0]];
  for (std::size_t slot : slots) m_set = std::max(m_set, s[slot]);

  UlpReport rep;
  rep.exact = same_bits(m_all, m_set);

  // Dense accumulation, checking that each excluded add is absorbed.
  Vec32 e(n);
  float denom = 0.0f;
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = std::exp(s[j] - m_all);
    const float next = denom + e[j];
    if (!in_set[j] && !same_bits(next, denom)) rep.exact = false;
    denom = next;
  }
  Vec32 acc(d, 0.0f);
  double mass = 0.0;
  double max_excluded = 0.0;
  const float* vd = values.data.data();
  for (std::size_t j = 0; j < n; ++j) {
    const float w = e[j] / denom;
    const float* v = vd + j * d;
    if (in_set[j]) {
      mass += static_cast<double>(w);
    } else {
      max_excluded = std::max(max_excluded, static_cast<double>(w));
    }
    for (std::size_t c = 0; c < d; ++c) {
      const float next = acc[c] + w * v[c];
      if (!in_set[j] && rep.exact && !same_bits(next, acc[c])) rep.exact = false;
      acc[c] = next;
    }
  }
  rep.condensate_mass = mass;
  rep.max_excluded_weight = max_excluded;
  return rep;
}

}  // namespace topo
