// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "topo/attention.hpp"
#include "topo/decode.hpp"

namespace topo {
namespace {

float uniform_pm(std::mt19937_64& rng, float b) {
  const float u = static_cast<float>(rng() >> 40) * 0x1p-24f;
  return (2.0f * u - 1.0f) * b;
}

// Keeps results observable so the timed kernels are not optimised away.
volatile float g_sink = 0.0f;

template <class Fn>
std::pair<double, double> time_ms(std::size_t warmup, std::size_t repeats, Fn&& fn) {
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> ts;
  ts.reserve(repeats);
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ts.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return median_mad(std::move(ts));
}

std::string opt_ms(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

double BenchRecord::sparsity() const {
  return n == 0 ? 0.0 : 1.0 - static_cast<double>(set_size) / static_cast<double>(n);
}

std::optional<double> BenchRecord::speedup() const {
  if (!t_dense_ms || !t_sparse_ms || *t_sparse_ms <= 0.0) return std::nullopt;
  return *t_dense_ms / *t_sparse_ms;
}

LogLogFit fit_loglog(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::kDimensionMismatch, "fit: x and y lengths differ");
  require(x.size() >= 2, ErrorKind::kInsufficientData, "fit: need at least 2 points");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0;
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && y[i] > 0, ErrorKind::kInvalidArgument, "fit: values must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
    sx += lx[i];
    sy += ly[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  require(sxx > 0, ErrorKind::kInsufficientData, "fit: all x values equal");
  LogLogFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return f;
}

ScalingFit fit_slopes(std::span<const BenchRecord> records) {
  std::vector<double> n, td, ts;
  for (const BenchRecord& r : records) {
    if (r.projected || !r.t_dense_ms || !r.t_sparse_ms) continue;
    n.push_back(static_cast<double>(r.n));
    td.push_back(*r.t_dense_ms);
    ts.push_back(*r.t_sparse_ms);
  }
  require(n.size() >= 4, ErrorKind::kInsufficientData,
          "fit_slopes: need at least 4 records with both times, got " + std::to_string(n.size()));
  return ScalingFit{fit_loglog(n, td), fit_loglog(n, ts)};
}

double extrapolate_quadratic(double t_measured_ms, std::size_t n0, std::size_t n_target) {
  require(n0 > 0 && n_target >= n0, ErrorKind::kInvalidArgument, "extrapolate_quadratic: need n_target >= n0 > 0");
  const double r = static_cast<double>(n_target) / static_cast<double>(n0);
  return t_measured_ms * r * r;
}

std::pair<double, double> median_mad(std::vector<double> xs) {
  require(!xs.empty(), ErrorKind::kEmptyInput, "median of nothing");
  auto median = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };
  const double med = median(xs);
  for (double& x : xs) x = std::abs(x - med);
  return {med, median(xs)};
}

std::vector<BenchRecord> run_scaling(const BenchConfig& cfg) {
  require(!cfg.n_list.empty(), ErrorKind::kEmptyInput, "bench: empty N list");
  require(std::is_sorted(cfg.n_list.begin(), cfg.n_list.end()) &&
              std::adjacent_find(cfg.n_list.begin(), cfg.n_list.end()) == cfg.n_list.end(),
          ErrorKind::kInvalidArgument, "n_list: must be strictly ascending");
  require(cfg.repeats >= 20, ErrorKind::kInvalidArgument, "repeats: must be >= 20");
  require(cfg.n_heads >= 1 && cfg.n_kv_heads >= 1 && cfg.n_heads % cfg.n_kv_heads == 0, ErrorKind::kInvalidArgument,
          "n_heads: must be a multiple of n_kv_heads");
  const CondensateConfig& cc = cfg.condensate;
  const std::size_t d = cfg.head_dim;
  const std::size_t group = cfg.n_heads / cfg.n_kv_heads;
  std::vector<BenchRecord> out;

  for (std::size_t n : cfg.n_list) {
    require(n >= 1, ErrorKind::kInvalidArgument, "n_list: N must be positive");
    const std::size_t bytes = 2 * n * d * cfg.n_kv_heads * sizeof(float) + n * sizeof(float);
    require(bytes <= cfg.memory_budget_bytes, ErrorKind::kMemoryBudget,
            "bench: N=" + std::to_string(n) + " needs " + std::to_string(bytes) + " bytes of cache");
    std::mt19937_64 rng(cfg.seed ^ n);
    std::vector<Vec32> keys(cfg.n_kv_heads), values(cfg.n_kv_heads);
    std::vector<std::vector<Vec32>> cols(cfg.n_kv_heads, std::vector<Vec32>(d, Vec32(n)));
    for (std::size_t kv = 0; kv < cfg.n_kv_heads; ++kv) {
      keys[kv].resize(n * d);
      values[kv].resize(n * d);
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = 0; c < d; ++c) {
          keys[kv][j * d + c] = uniform_pm(rng, 1.0f);
          cols[kv][c][j] = keys[kv][j * d + c];
          values[kv][j * d + c] = uniform_pm(rng, 1.0f);
        }
      }
    }
    std::vector<Vec32> qs(cfg.n_heads, Vec32(d));
    for (Vec32& q : qs) {
      for (float& x : q) x = uniform_pm(rng, 1.0f);
    }

    // Selection happens outside the timed region, as a warmed-up selector would.
    BenchRecord rec;
    rec.n = n;
    std::vector<std::vector<std::size_t>> sets(cfg.n_heads);
    const std::size_t win_begin = n - std::min(cc.window, n);
    for (std::size_t kv = 0; kv < cfg.n_kv_heads; ++kv) {
      const RowsView kr{keys[kv], d};
      std::vector<std::size_t> by_norm;
      if (cc.selector == Selector::kKeyNorm) by_norm = topk_keynorm(kr, win_begin, cc.topk);
      for (std::size_t g = 0; g < group; ++g) {
        const std::size_t h = kv * group + g;
        CondensateSet set;
        if (cc.selector == Selector::kScores) {
          Vec32 sc(n);
          attention_scores(qs[h], kr, sc);
          set = build_condensate(sc, cc, PersistentSet{});
        } else {
          set = assemble_condensate(n, cc.window, {}, by_norm, cc.budget_cap,
                                    [&](std::size_t p) { return l2_norm(kr.row(p)); });
        }
        rec.set_size = std::max(rec.set_size, set.size());
        rec.ops_sparse += kOpsPerKeyDim * set.size() * d;
        sets[h] = std::move(set.positions);
      }
    }
    rec.ops_dense = kOpsPerKeyDim * cfg.n_heads * n * d;
    const auto tri = static_cast<std::uint64_t>(n) * (n + 1) / 2;
    rec.ops_prefill = kOpsPerKeyDim * cfg.n_heads * d * tri;

    Vec32 out_buf(d);
    const auto [ts, ts_mad] = time_ms(cfg.warmup, cfg.repeats, [&] {
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t kv = h / group;
        subset_attend_into(qs[h], RowsView{keys[kv], d}, RowsView{values[kv], d}, sets[h], out_buf);
        g_sink = g_sink + out_buf[0];
      }
    });
    rec.t_sparse_ms = ts;
    rec.mad_sparse_ms = ts_mad;
    if (n <= cfg.dense_max_n) {
      const auto [td, td_mad] = time_ms(cfg.warmup, cfg.repeats, [&] {
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
          const std::size_t kv = h / group;
          const KeyColumns kc{cols[kv]};
          dense_attend_into(qs[h], RowsView{keys[kv], d}, RowsView{values[kv], d}, out_buf, nullptr, &kc);
          g_sink = g_sink + out_buf[0];
        }
      });
      rec.t_dense_ms = td;
      rec.mad_dense_ms = td_mad;
    }
    out.push_back(rec);
  }
  return out;
}

BenchRecord project_row(std::span<const BenchRecord> records, std::size_t n_target, const BenchConfig& cfg) {
  const BenchRecord* base = nullptr;
  for (const BenchRecord& r : records) {
    if (!r.projected && r.t_dense_ms) base = &r;
  }
  require(base != nullptr, ErrorKind::kInsufficientData, "project: no measured dense time to extrapolate from");
  BenchRecord p;
  p.n = n_target;
  p.projected = true;
  p.t_dense_ms = extrapolate_quadratic(*base->t_dense_ms, base->n, n_target);
  for (const BenchRecord& r : records) {
    if (r.n == n_target && r.t_sparse_ms) p.t_sparse_ms = r.t_sparse_ms;
  }
  p.ops_dense = kOpsPerKeyDim * cfg.n_heads * n_target * cfg.head_dim;
  p.ops_sparse = records.empty() ? 0 : records.back().ops_sparse;
  p.set_size = records.empty() ? 0 : records.back().set_size;
  const auto tri = static_cast<std::uint64_t>(n_target) * (n_target + 1) / 2;
  p.ops_prefill = kOpsPerKeyDim * cfg.n_heads * cfg.head_dim * tri;
  return p;
}

std::string to_csv(std::span<const BenchRecord> records) {
  std::string out = "N,t_dense_ms,t_sparse_ms,ops_dense,ops_sparse,sparsity,speedup,projected\n";
  char buf[64];
  for (const BenchRecord& r : records) {
    out += std::to_string(r.n) + "," + opt_ms(r.t_dense_ms) + "," + opt_ms(r.t_sparse_ms) + "," +
           std::to_string(r.ops_dense) + "," + std::to_string(r.ops_sparse) + ",";
    std::snprintf(buf, sizeof buf, "%.6f", r.sparsity());
    out += buf;
    out += ",";
    if (auto s = r.speedup()) {
      std::snprintf(buf, sizeof buf, "%.3f", *s);
      out += buf;
    }
    out += r.projected ? ",1\n" : ",0\n";
  }
  return out;
}

std::string to_table(std::span<const BenchRecord> records) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-9s %-22s %-12s %-10s %-9s %s\n", "N", "dense (ms)", "sparse (ms)", "speedup",
                "|C|", "sparsity");
  std::string out = buf;
  for (const BenchRecord& r : records) {
    std::string dense = "infeasible";
    if (r.t_dense_ms) {
      std::snprintf(buf, sizeof buf, "%.3f%s", *r.t_dense_ms, r.projected ? " PROJECTED" : "");
      dense = buf;
    }
    std::string sparse = "-";
    if (r.t_sparse_ms) {
      std::snprintf(buf, sizeof buf, "%.4f", *r.t_sparse_ms);
      sparse = buf;
    }
    std::string speed = "-";
    if (auto s = r.speedup()) {
      std::snprintf(buf, sizeof buf, "%.1fx%s", *s, r.projected ? "*" : "");
      speed = buf;
    }
    std::snprintf(buf, sizeof buf, "%-9zu %-22s %-12s %-10s %-9zu %.2f%%\n", r.n, dense.c_str(), sparse.c_str(),
                  speed.c_str(), r.set_size, 100.0 * r.sparsity());
    out += buf;
  }
  return out;
}

}  // namespace topo
