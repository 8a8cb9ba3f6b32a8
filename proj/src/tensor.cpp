// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace topo {

Mat32::Mat32(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorKind::kShapeMismatch,
          "matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) + "x" +
              std::to_string(cols_));
}

void matvec_into(const Mat32& m, std::span<const float> x, std::span<float> y) {
  require(m.cols() == x.size(), ErrorKind::kDimensionMismatch,
          "matvec: cols " + std::to_string(m.cols()) + " vs x " + std::to_string(x.size()));
  require(m.rows() == y.size(), ErrorKind::kDimensionMismatch, "matvec: output length");
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  const float* base = m.data().data();
  std::size_t r = 0;
  // Four independent row accumulators; each row still sums in ascending c.
  for (; r + 4 <= rows; r += 4) {
    const float* a0 = base + r * cols;
    const float* a1 = a0 + cols;
    const float* a2 = a1 + cols;
    const float* a3 = a2 + cols;
    float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
    for (std::size_t c = 0; c < cols; ++c) {
      const float xc = x[c];
      s0 += a0[c] * xc;
      s1 += a1[c] * xc;
      s2 += a2[c] * xc;
      s3 += a3[c] * xc;
    }
    y[r] = s0;
    y[r + 1] = s1;
    y[r + 2] = s2;
    y[r + 3] = s3;
  }
  for (; r < rows; ++r) y[r] = dot(m.row(r), x);
}

Mat32 transpose(const Mat32& m) {
  Mat32 t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t.at(c, r) = m.at(r, c);
  }
  return t;
}

void matvec_t_into(const Mat32& mt, std::span<const float> x, std::span<float> y) {
  require(mt.rows() == x.size(), ErrorKind::kDimensionMismatch,
          "matvec: cols " + std::to_string(mt.rows()) + " vs x " + std::to_string(x.size()));
  require(mt.cols() == y.size(), ErrorKind::kDimensionMismatch, "matvec: output length");
  const std::size_t rows = mt.cols();
  const float* base = mt.data().data();
  float* out = y.data();
  std::fill(out, out + rows, 0.0f);
  std::size_t c = 0;
  for (; c + 4 <= x.size(); c += 4) {
    const float x0 = x[c], x1 = x[c + 1], x2 = x[c + 2], x3 = x[c + 3];
    const float* c0 = base + c * rows;
    const float* c1 = c0 + rows;
    const float* c2 = c1 + rows;
    const float* c3 = c2 + rows;
    for (std::size_t r = 0; r < rows; ++r) {
      float a = out[r];
      a += c0[r] * x0;
      a += c1[r] * x1;
      a += c2[r] * x2;
      a += c3[r] * x3;
      out[r] = a;
    }
  }
  for (; c < x.size(); ++c) {
    const float xc = x[c];
    const float* col = base + c * rows;
    for (std::size_t r = 0; r < rows; ++r) out[r] += col[r] * xc;
  }
}

Vec32 matvec(const Mat32& m, std::span<const float> x) {
  Vec32 y(m.rows());
  matvec_into(m, x, y);
  return y;
}

float dot(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), ErrorKind::kDimensionMismatch, "dot: length mismatch");
  float s = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec32 stable_softmax(std::span<const float> scores) {
  require(!scores.empty(), ErrorKind::kEmptyInput, "softmax of empty scores");
  require(all_finite(scores), ErrorKind::kInvalidArgument, "softmax: non-finite score");
  const float mx = *std::max_element(scores.begin(), scores.end());
  Vec32 out(scores.size());
  float denom = 0.0f;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    out[j] = std::exp(scores[j] - mx);
    denom += out[j];
  }
  for (float& w : out) w = w / denom;
  return out;
}

void rope_apply_inplace(std::span<float> v, std::size_t pos, float theta_base) {
  require(v.size() % 2 == 0, ErrorKind::kInvalidArgument, "rope: odd vector length " + std::to_string(v.size()));
  if (pos == 0) return;
  const double d = static_cast<double>(v.size());
  for (std::size_t i = 0; i < v.size() / 2; ++i) {
    const double freq = std::pow(static_cast<double>(theta_base), -2.0 * static_cast<double>(i) / d);
    const double angle = static_cast<double>(pos) * freq;
    const float c = static_cast<float>(std::cos(angle));
    const float s = static_cast<float>(std::sin(angle));
    const float a = v[2 * i];
    const float b = v[2 * i + 1];
    v[2 * i] = a * c - b * s;
    v[2 * i + 1] = a * s + b * c;
  }
}

Vec32 rope_apply(std::span<const float> v, std::size_t pos, float theta_base) {
  Vec32 out(v.begin(), v.end());
  rope_apply_inplace(out, pos, theta_base);
  return out;
}

std::size_t argmax_det(std::span<const float> v) {
  require(!v.empty(), ErrorKind::kEmptyInput, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

float l2_norm(std::span<const float> v) {
  require(!v.empty(), ErrorKind::kEmptyInput, "norm of empty vector");
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return static_cast<float>(std::sqrt(s));
}

void rms_norm(std::span<const float> x, std::span<const float> gain, float eps, std::span<float> out) {
  require(x.size() == gain.size() && x.size() == out.size(), ErrorKind::kDimensionMismatch, "rms_norm");
  float ss = 0.0f;
  for (float v : x) ss += v * v;
  const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + eps);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] * inv) * gain[i];
}

void layer_norm(std::span<const float> x, std::span<const float> gain, std::span<const float> bias, float eps,
                std::span<float> out) {
  require(x.size() == gain.size() && x.size() == out.size(), ErrorKind::kDimensionMismatch, "layer_norm");
  require(bias.empty() || bias.size() == x.size(), ErrorKind::kDimensionMismatch, "layer_norm bias");
  const float n = static_cast<float>(x.size());
  float mean = 0.0f;
  for (float v : x) mean += v;
  mean = mean / n;
  float var = 0.0f;
  for (float v : x) var += (v - mean) * (v - mean);
  var = var / n;
  const float inv = 1.0f / std::sqrt(var + eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    float y = ((x[i] - mean) * inv) * gain[i];
    if (!bias.empty()) y = y + bias[i];
    out[i] = y;
  }
}

void gelu_inplace(std::span<float> x) {
  constexpr float kSqrt2OverPi = 0.7978845608028654f;
  for (float& v : x) {
    const float inner = kSqrt2OverPi * (v + 0.044715f * v * v * v);
    v = 0.5f * v * (1.0f + std::tanh(inner));
  }
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace topo
