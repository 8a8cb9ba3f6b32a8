// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

// Dense f32 primitives. Every reduction here accumulates in ascending index
// order, one rounding per add, so results are reproducible bit-for-bit. The
// build disables floating-point contraction (-ffp-contract=off) for this reason.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "topo/error.hpp"

namespace topo {

using Vec32 = std::vector<float>;

class Mat32 {
 public:
  Mat32() = default;
  Mat32(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat32(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  float& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<float>& data() noexcept { return data_; }
  const std::vector<float>& data() const noexcept { return data_; }

  friend bool operator==(const Mat32&, const Mat32&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

// Read-only view over `rows` contiguous vectors of length `dim`.
struct RowsView {
  std::span<const float> data;
  std::size_t dim = 0;

  std::size_t rows() const noexcept { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const float> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

/// y[r] = sum_c m[r,c] * x[c], accumulated over ascending c.
Vec32 matvec(const Mat32& m, std::span<const float> x);
void matvec_into(const Mat32& m, std::span<const float> x, std::span<float> y);

Mat32 transpose(const Mat32& m);
/// Same result as matvec_into(m, x, y) given mt = transpose(m); the inner loop
/// runs over output rows, so it vectorises while each row keeps ascending c.
void matvec_t_into(const Mat32& mt, std::span<const float> x, std::span<float> y);

/// Ascending-order f32 dot product.
float dot(std::span<const float> a, std::span<const float> b);

/// exp(s - max) / D, with D summed in ascending index order in f32.
Vec32 stable_softmax(std::span<const float> scores);

/// Rotary embedding: pair (v[2i], v[2i+1]) turned by pos * theta^(-2i/d).
Vec32 rope_apply(std::span<const float> v, std::size_t pos, float theta_base);
void rope_apply_inplace(std::span<float> v, std::size_t pos, float theta_base);

/// Index of the largest element; ties go to the lowest index.
std::size_t argmax_det(std::span<const float> v);

/// Euclidean norm accumulated in f64, returned as f32.
float l2_norm(std::span<const float> v);

void rms_norm(std::span<const float> x, std::span<const float> gain, float eps, std::span<float> out);
void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias, float eps,
                std::span<float> out);

/// tanh-approximated GELU, applied in place.
void gelu_inplace(std::span<float> x);

bool all_finite(std::span<const float> v);

}  // namespace topo
