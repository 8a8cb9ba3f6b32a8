// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/condensate.hpp"

#include <cmath>
#include <map>
#include <string>
#include <utility>

namespace topo {

bool CondensateConfig::is_pillar(std::size_t layer) const {
  return std::binary_search(pillar_layers.begin(), pillar_layers.end(), layer);
}

void validate(const CondensateConfig& c, std::size_t n_layers) {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorKind::kInvalidArgument, "condensate." + field + ": " + why);
  };
  if (c.window < 1) bad("window", "must be >= 1");
  if (c.w_min < 1 || c.w_min > c.w_max) bad("w_min", "must satisfy 1 <= w_min <= w_max");
  if (c.persist_threshold < 1) bad("persist_threshold", "must be >= 1");
  const std::size_t widest = c.adaptive_window ? c.w_max : c.window;
  if (1 + widest + c.topk > c.budget_cap) {
    bad("budget_cap", std::to_string(c.budget_cap) + " < 1 + window + topk = " + std::to_string(1 + widest + c.topk));
  }
  if (!c.adaptive_window && c.window > c.w_max) bad("window", "must not exceed w_max");
  for (std::size_t i = 0; i < c.pillar_layers.size(); ++i) {
    if (c.pillar_layers[i] >= n_layers) bad("pillar_layers", "layer " + std::to_string(c.pillar_layers[i]) + " out of range");
    if (i > 0 && c.pillar_layers[i] <= c.pillar_layers[i - 1]) bad("pillar_layers", "must be sorted and unique");
  }
}

std::vector<std::size_t> default_pillars(std::size_t n_layers) {
  if (n_layers < 2) return {0};
  return {0, n_layers / 2};
}

CondensateConfig dense_config(std::size_t n_layers) {
  CondensateConfig c;
  c.pillar_layers.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) c.pillar_layers[l] = l;
  return c;
}

std::size_t CondensateSet::count(Part p) const { return static_cast<std::size_t>(std::count(parts.begin(), parts.end(), p)); }

bool CondensateSet::contains(std::size_t pos) const {
  return std::binary_search(positions.begin(), positions.end(), pos);
}

bool PersistentSet::insert(std::size_t pos, std::size_t step) {
  auto it = std::lower_bound(positions_.begin(), positions_.end(), pos);
  if (it != positions_.end() && *it == pos) return false;
  const auto idx = it - positions_.begin();
  positions_.insert(it, pos);
  steps_.insert(steps_.begin() + idx, step);
  return true;
}

bool PersistentSet::contains(std::size_t pos) const {
  return std::binary_search(positions_.begin(), positions_.end(), pos);
}

std::size_t PersistentSet::inserted_at(std::size_t pos) const {
  auto it = std::lower_bound(positions_.begin(), positions_.end(), pos);
  require(it != positions_.end() && *it == pos, ErrorKind::kInvalidArgument,
          "position " + std::to_string(pos) + " is not persistent");
  return steps_[static_cast<std::size_t>(it - positions_.begin())];
}

std::vector<std::size_t> topk_scores(std::span<const float> scores, std::size_t exclude_from, std::size_t k) {
  const std::size_t end = std::min(exclude_from, scores.size());
  if (k == 0 || end <= 1) return {};
  std::vector<std::size_t> idx(end - 1);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i + 1;
  const std::size_t take = std::min(k, idx.size());
  auto better = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(), better);
  idx.resize(take);
  return idx;
}

std::vector<std::size_t> topk_keynorm(RowsView keys, std::size_t exclude_from, std::size_t k) {
  const std::size_t end = std::min(exclude_from, keys.rows());
  Vec32 norms(end);
  for (std::size_t j = 1; j < end; ++j) norms[j] = l2_norm(keys.row(j));
  return topk_scores(norms, end, k);
}

CondensateSet build_condensate(std::span<const float> scores, const CondensateConfig& cfg,
                               const PersistentSet& persistent, std::size_t window) {
  const std::size_t n = scores.size();
  const std::size_t win_begin = n - std::min(window, n);
  const auto dynamic = topk_scores(scores, win_begin, cfg.topk);
  return assemble_condensate(n, window, persistent.positions(), dynamic, cfg.budget_cap,
                             [&](std::size_t p) { return scores[p]; });
}

CondensateSet build_condensate(std::span<const float> scores, const CondensateConfig& cfg,
                               const PersistentSet& persistent) {
  return build_condensate(scores, cfg, persistent, cfg.window);
}

Vec32 sparse_attend(std::span<const float> q, RowsView keys, RowsView values, const CondensateSet& set,
                    UlpReport* ulp) {
  require(!set.positions.empty(), ErrorKind::kEmptyInput, "sparse_attend: empty condensate set");
  Vec32 out(q.size());
  subset_attend_into(q, keys, values, set.positions, out);
  if (ulp != nullptr) *ulp = ulp_check(q, keys, values, set.positions);
  return out;
}

float rep_score(std::span<const TokenId> tokens, std::size_t w_max) {
  require(!tokens.empty(), ErrorKind::kEmptyInput, "rep_score: empty token window");
  const std::size_t n = std::min(tokens.size(), std::max<std::size_t>(w_max, 1));
  const auto recent = tokens.subspan(tokens.size() - n);
  if (recent.size() < 2) return 0.0f;
  std::map<std::pair<TokenId, TokenId>, std::size_t> counts;
  for (std::size_t i = 1; i < recent.size(); ++i) ++counts[{recent[i - 1], recent[i]}];
  std::size_t repeated = 0;
  for (const auto& [bigram, c] : counts) {
    if (c > 1) repeated += c;
  }
  const float r = static_cast<float>(repeated) / static_cast<float>(recent.size() - 1);
  return std::clamp(r, 0.0f, 1.0f);
}

std::size_t adaptive_window(float rep, const CondensateConfig& cfg) {
  require(rep >= 0.0f && rep <= 1.0f, ErrorKind::kInvalidArgument, "adaptive_window: rep outside [0,1]");
  const double w = static_cast<double>(cfg.w_min) + static_cast<double>(cfg.w_max - cfg.w_min) * static_cast<double>(rep);
  const auto r = static_cast<std::size_t>(std::llround(w));
  return std::clamp(r, cfg.w_min, cfg.w_max);
}

MassSplit mass_coverage(const AttentionRow& row, const CondensateSet& set) {
  require(!row.scores.empty(), ErrorKind::kEmptyInput, "mass_coverage: empty row");
  const std::size_t n = row.scores.size();
  for (std::size_t p : set.positions) {
    require(p < n, ErrorKind::kInvalidArgument, "mass_coverage: set position " + std::to_string(p) + " beyond row");
  }
  double mx = row.scores[0];
  for (float s : row.scores) mx = std::max(mx, static_cast<double>(s));
  std::vector<double> e(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = std::exp(static_cast<double>(row.scores[j]) - mx);
    total += e[j];
  }
  MassSplit out;
  std::size_t k = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const double w = e[j] / total;
    if (k < set.positions.size() && set.positions[k] == j) {
      out.condensate += w;
      ++k;
    } else {
      out.middle += w;
    }
  }
  return out;
}

void KeyNormIndex::clear(std::size_t k) {
  k_ = k;
  entries_.clear();
  offered_upto = 1;
}

void KeyNormIndex::offer(std::size_t pos, float norm) {
  if (k_ == 0) return;
  const Entry e{norm, pos};
  if (entries_.size() == k_ && !better(e, entries_.back())) return;
  auto it = std::upper_bound(entries_.begin(), entries_.end(), e, [](const Entry& a, const Entry& b) { return better(a, b); });
  entries_.insert(it, e);
  if (entries_.size() > k_) entries_.pop_back();
}

std::vector<std::size_t> KeyNormIndex::top() const {
  std::vector<std::size_t> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.push_back(e.pos);
  return out;
}

}  // namespace topo
