// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <string>

#include "json.hpp"

namespace topo {
namespace {

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Uniform in [-b, b] from the top 24 bits, so the stream is the same on every platform.
float uniform_pm(std::mt19937_64& rng, float b) {
  const float u = static_cast<float>(rng() >> 40) * 0x1p-24f;
  return (2.0f * u - 1.0f) * b;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string selector_name(Selector s) { return s == Selector::kScores ? "scores" : "keynorm"; }

}  // namespace

std::vector<std::size_t> top_indices(std::span<const float> v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t take = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                    [&](std::size_t a, std::size_t b) { return v[a] > v[b] || (v[a] == v[b] && a < b); });
  idx.resize(take);
  return idx;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), ErrorKind::kDimensionMismatch, "cosine: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 && bb == 0.0) return 1.0;
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

EquivalenceReport run_equivalence(const Model& model, const std::vector<std::vector<TokenId>>& prompts,
                                  const CondensateConfig& cfg, const EquivalenceOptions& opts) {
  require(!prompts.empty(), ErrorKind::kEmptyInput, "run_equivalence: no prompts");
  require(opts.steps_per_prompt >= 1, ErrorKind::kInvalidArgument, "steps_per_prompt: must be >= 1");
  EquivalenceReport rep;
  const std::size_t cap = std::min(opts.oracle_cap, model.spec.max_seq);
  for (const auto& p : prompts) {
    require(!p.empty(), ErrorKind::kEmptyInput, "run_equivalence: empty prompt");
    if (p.size() + opts.steps_per_prompt > cap) {
      rep.oracle_feasible = false;
      rep.infeasible_reason = "oracle infeasible: prompt of " + std::to_string(p.size()) + " + " +
                              std::to_string(opts.steps_per_prompt) + " steps exceeds the dense cap of " +
                              std::to_string(cap);
      return rep;
    }
  }

  std::size_t top1 = 0, top5 = 0, mass_n = 0;
  double cos_sum = 0.0, mass_sum = 0.0;
  DecodeOptions dopts;
  dopts.retention = opts.retention;
  dopts.ulp_diagnostics = opts.ulp_diagnostics;
  for (const auto& p : prompts) {
    DecodeSession sparse(model, cfg, dopts);
    DecodeSession oracle(model, dense_config(model.spec.n_layers));
    TokenId next = oracle.prefill(p);
    sparse.prefill(p);
    for (std::size_t s = 0; s < opts.steps_per_prompt; ++s) {
      const TokenId fed = next;
      const TokenId a = sparse.step(fed);
      next = oracle.step(fed);
      ++rep.tokens_compared;
      top1 += a == next ? 1 : 0;
      auto ta = top_indices(sparse.logits(), 5);
      auto tb = top_indices(oracle.logits(), 5);
      std::sort(ta.begin(), ta.end());
      std::sort(tb.begin(), tb.end());
      top5 += ta == tb ? 1 : 0;

      const double c = cosine_similarity(sparse.hidden(), oracle.hidden());
      rep.min_cosine = std::min(rep.min_cosine, c);
      cos_sum += c;

      const StepDiagnostics& d = sparse.diagnostics();
      for (const LayerDiagnostics& l : d.layers) {
        if (!l.pillar) rep.max_set_size = std::max(rep.max_set_size, l.set_size);
      }
      if (d.condensate_mass) {
        rep.min_condensate_mass = std::min(rep.min_condensate_mass, *d.condensate_mass);
        mass_sum += *d.condensate_mass;
        ++mass_n;
      }
      const bool identical =
          same_bits(sparse.logits(), oracle.logits()) && same_bits(sparse.hidden(), oracle.hidden());
      rep.bit_identical_steps += identical ? 1 : 0;
      if (opts.ulp_diagnostics && d.ulp_exact()) {
        ++rep.ulp_exact_steps;
        if (!identical) ++rep.ulp_unsound_steps;
      }
    }
  }
  const auto n = static_cast<double>(rep.tokens_compared);
  rep.top1_match = static_cast<double>(top1) / n;
  rep.top5_match = static_cast<double>(top5) / n;
  rep.mean_cosine = cos_sum / n;
  rep.mean_condensate_mass = mass_n > 0 ? mass_sum / static_cast<double>(mass_n) : 1.0;
  rep.ulp_exact_fraction = static_cast<double>(rep.ulp_exact_steps) / n;
  return rep;
}

std::string to_json(const EquivalenceReport& r) {
  nlohmann::ordered_json j;
  j["oracle_feasible"] = r.oracle_feasible;
  if (!r.oracle_feasible) j["reason"] = r.infeasible_reason;
  j["tokens_compared"] = r.tokens_compared;
  j["top1_match"] = r.top1_match;
  j["top5_match"] = r.top5_match;
  j["min_cosine"] = r.min_cosine;
  j["mean_cosine"] = r.mean_cosine;
  j["min_condensate_mass"] = r.min_condensate_mass;
  j["mean_condensate_mass"] = r.mean_condensate_mass;
  j["ulp_exact_fraction"] = r.ulp_exact_fraction;
  j["ulp_exact_steps"] = r.ulp_exact_steps;
  j["ulp_unsound_steps"] = r.ulp_unsound_steps;
  j["bit_identical_steps"] = r.bit_identical_steps;
  j["max_set_size"] = r.max_set_size;
  return j.dump(2);
}

std::string to_table(const EquivalenceReport& r) {
  if (!r.oracle_feasible) return r.infeasible_reason + "\n";
  std::string out;
  auto line = [&](const std::string& k, const std::string& v) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-24s %s\n", k.c_str(), v.c_str());
    out += buf;
  };
  line("metric", "value");
  line("tokens compared", std::to_string(r.tokens_compared));
  line("token match (top-1)", fmt("%.2f%%", 100.0 * r.top1_match));
  line("token match (top-5)", fmt("%.2f%%", 100.0 * r.top5_match));
  line("cosine (min)", fmt("%.6f", r.min_cosine));
  line("cosine (mean)", fmt("%.6f", r.mean_cosine));
  line("mass coverage (min)", fmt("%.6f", r.min_condensate_mass));
  line("mass coverage (mean)", fmt("%.6f", r.mean_condensate_mass));
  line("ulp-exact steps", fmt("%.2f%%", 100.0 * r.ulp_exact_fraction));
  line("bit-identical steps", std::to_string(r.bit_identical_steps));
  return out;
}

// ---------------------------------------------------------------------------

std::size_t NeedleReport::found() const {
  return static_cast<std::size_t>(std::count_if(needles.begin(), needles.end(), [](const NeedleHit& h) { return h.found; }));
}

std::size_t NeedleReport::correct() const {
  return static_cast<std::size_t>(
      std::count_if(needles.begin(), needles.end(), [](const NeedleHit& h) { return h.answer_correct; }));
}

std::vector<std::size_t> needle_positions(std::size_t n, std::size_t needles, std::size_t window) {
  require(needles >= 1 && needles <= kFactSlots, ErrorKind::kInvalidArgument,
          "needles: must be in [1, " + std::to_string(kFactSlots) + "]");
  require(n >= 4 * (needles + 1), ErrorKind::kInvalidArgument, "needle suite: N too small");
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i + 1 < needles; ++i) pos.push_back((i + 1) * n / (needles + 1));
  const std::size_t back = std::max<std::size_t>(1, std::min(window, n - 1) / 2);
  pos.push_back(std::max(n - 1 - back, pos.empty() ? 1 : pos.back() + 1));
  return pos;
}

NeedleReport run_needle_cache(const NeedleCacheSpec& spec, const CondensateConfig& cfg) {
  const std::size_t n = spec.n;
  const std::size_t d = spec.head_dim;
  require(spec.needles >= 1 && spec.needles <= kFactSlots && spec.needles < d, ErrorKind::kInvalidArgument,
          "needles: must be in [1, " + std::to_string(kFactSlots) + "]");
  const std::size_t bytes = 2 * n * d * sizeof(float) + n * sizeof(float);
  require(bytes <= spec.memory_budget_bytes, ErrorKind::kMemoryBudget,
          "synthetic cache of N=" + std::to_string(n) + " needs " + std::to_string(bytes) + " bytes, budget " +
              std::to_string(spec.memory_budget_bytes));
  const std::vector<std::size_t> pos = needle_positions(n, spec.needles, cfg.window);

  // Slot dims [0, needles) are zero everywhere except on needles; the rest is bounded noise.
  std::mt19937_64 rng(spec.seed);
  Vec32 keys(n * d, 0.0f), values(n * d, 0.0f);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t c = spec.needles; c < d; ++c) keys[j * d + c] = uniform_pm(rng, spec.background);
    for (std::size_t c = spec.needles; c < d; ++c) values[j * d + c] = uniform_pm(rng, spec.background);
  }
  for (std::size_t s = 0; s < pos.size(); ++s) {
    keys[pos[s] * d + s] = spec.needle_gain;
    values[pos[s] * d + s] = 1.0f;
  }
  const RowsView kv{keys, d}, vv{values, d};

  NeedleReport rep;
  rep.mode = "synthetic-cache";
  rep.n = n;
  rep.selector = cfg.selector;
  rep.window = cfg.window;
  rep.topk = cfg.topk;
  const std::size_t win_begin = n - std::min(cfg.window, n);
  Vec32 norms;
  std::vector<std::size_t> by_norm;
  if (cfg.selector == Selector::kKeyNorm) by_norm = topk_keynorm(kv, win_begin, cfg.topk);
  const PersistentSet none;
  Vec32 scores(n), q(d), out(d);
  for (std::size_t s = 0; s < pos.size(); ++s) {
    std::fill(q.begin(), q.end(), 0.0f);
    q[s] = 1.0f;
    for (std::size_t c = spec.needles; c < d; ++c) q[c] = uniform_pm(rng, spec.background);
    attention_scores(q, kv, scores);
    CondensateSet set;
    if (cfg.selector == Selector::kScores) {
      set = build_condensate(scores, cfg, none);
    } else {
      set = assemble_condensate(n, cfg.window, {}, by_norm, cfg.budget_cap,
                                [&](std::size_t p) { return l2_norm(kv.row(p)); });
    }
    subset_attend_into(q, kv, vv, set.positions, out);
    NeedleHit hit;
    hit.position = pos[s];
    hit.in_window = pos[s] >= win_begin;
    hit.found = set.contains(pos[s]);
    const std::size_t best = argmax_det(std::span<const float>(out).first(spec.needles));
    hit.answer_correct = best == s && out[s] > 0.5f;
    rep.set_size = std::max(rep.set_size, set.size());
    rep.needles.push_back(hit);
  }
  return rep;
}

NeedleReport run_needle_model(const Model& model, std::size_t n, std::size_t needles, const CondensateConfig& cfg,
                              std::uint64_t seed) {
  require(needles >= 1 && needles <= kFactSlots, ErrorKind::kInvalidArgument,
          "needles: must be in [1, " + std::to_string(kFactSlots) + "]");
  require(n <= kOracleCap, ErrorKind::kOracleInfeasible,
          "model-mode needle suite at N=" + std::to_string(n) + " exceeds the dense prefill cap of " +
              std::to_string(kOracleCap));
  std::vector<Fact> facts;
  for (std::size_t s = 0; s < needles; ++s) facts.push_back(slot_fact(model.spec, s));
  NeedleReport rep;
  rep.mode = "model";
  rep.n = n;
  rep.selector = cfg.selector;
  rep.window = cfg.window;
  rep.topk = cfg.topk;
  for (std::size_t s = 0; s < needles; ++s) {
    const NeedlePrompt p = plant_needle_prompt(model.spec, facts, n, s, seed);
    DecodeSession session(model, cfg);
    const std::span<const TokenId> toks(p.tokens);
    session.prefill(toks.first(toks.size() - 1));
    const TokenId answer = session.step(toks.back());
    NeedleHit hit;
    hit.position = p.needle_positions[s];
    hit.in_window = hit.position + cfg.window >= n;
    hit.answer_correct = answer == p.expected_answer.front();
    hit.found = true;
    for (std::size_t l = 0; l < model.spec.n_layers; ++l) {
      if (cfg.is_pillar(l)) continue;
      bool any = false;
      for (const CondensateSet& set : session.sets(l)) {
        any = any || set.contains(hit.position);
        rep.set_size = std::max(rep.set_size, set.size());
      }
      hit.found = hit.found && any;
    }
    rep.needles.push_back(hit);
  }
  return rep;
}

std::string to_json(const NeedleReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode;
  j["n"] = r.n;
  j["selector"] = selector_name(r.selector);
  j["window"] = r.window;
  j["topk"] = r.topk;
  j["set_size"] = r.set_size;
  j["found"] = r.found();
  j["correct"] = r.correct();
  j["needles"] = nlohmann::ordered_json::array();
  for (const NeedleHit& h : r.needles) {
    j["needles"].push_back(
        {{"position", h.position}, {"in_window", h.in_window}, {"found", h.found}, {"answer_correct", h.answer_correct}});
  }
  return j.dump(2);
}

std::string to_table(const NeedleReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %-8s %-10s %-9s %s\n", "N", "needles", "found", "correct", "sparsity");
  std::string out = buf;
  const double sparsity = r.n > 0 ? 1.0 - static_cast<double>(r.set_size) / static_cast<double>(r.n) : 0.0;
  std::snprintf(buf, sizeof buf, "%-10zu %-8zu %zu/%-8zu %zu/%-7zu %.2f%% (|C|=%zu)\n", r.n, r.needles.size(),
                r.found(), r.needles.size(), r.correct(), r.needles.size(), 100.0 * sparsity, r.set_size);
  out += buf;
  return out;
}

// ---------------------------------------------------------------------------

MassCensus mass_census(const Model& model, std::span<const TokenId> prompt, std::size_t layer, std::size_t query_pos,
                       const CondensateConfig& cfg) {
  require(layer < model.spec.n_layers, ErrorKind::kInvalidArgument,
          "layer " + std::to_string(layer) + " out of range [0, " + std::to_string(model.spec.n_layers) + ")");
  require(query_pos < prompt.size(), ErrorKind::kInvalidArgument, "query position beyond the prompt");
  require(query_pos < kOracleCap, ErrorKind::kOracleInfeasible, "mass census beyond the dense cap");
  ForwardOptions fo;
  fo.capture_layer = layer;
  const ForwardResult fr = full_forward(model, prompt.first(query_pos + 1), fo);

  MassCensus mc;
  mc.layer = layer;
  mc.query_pos = query_pos;
  mc.n = query_pos + 1;
  const std::size_t n = mc.n;
  const std::size_t win_begin = n - std::min(cfg.window, n);
  for (const AttentionRow& row : fr.rows) {
    double mx = row.scores[0];
    for (float s : row.scores) mx = std::max(mx, static_cast<double>(s));
    std::vector<double> e(n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (e[j] = std::exp(static_cast<double>(row.scores[j]) - mx));
    std::vector<char> dyn(n, 0);
    for (std::size_t p : topk_scores(row.scores, win_begin, cfg.topk)) dyn[p] = 1;
    RegionMass m;
    std::size_t size = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = e[j] / z;
      if (j >= win_begin) {
        m.window += w;
        ++size;
      } else if (j == 0) {
        m.anchor += w;
        ++size;
      } else if (dyn[j]) {
        m.dynamic += w;
        ++size;
      } else {
        m.middle += w;
      }
    }
    mc.set_size = std::max(mc.set_size, size);
    mc.heads.push_back(m);
  }
  const auto h = static_cast<double>(mc.heads.size());
  for (const RegionMass& m : mc.heads) {
    mc.mean.anchor += m.anchor / h;
    mc.mean.window += m.window / h;
    mc.mean.dynamic += m.dynamic / h;
    mc.mean.middle += m.middle / h;
  }
  return mc;
}

std::string to_json(const MassCensus& m) {
  auto region = [](const RegionMass& r) {
    return nlohmann::ordered_json{{"anchor", r.anchor},
                                  {"window", r.window},
                                  {"dynamic", r.dynamic},
                                  {"middle", r.middle},
                                  {"condensate", r.condensate()}};
  };
  nlohmann::ordered_json j;
  j["layer"] = m.layer;
  j["query_pos"] = m.query_pos;
  j["n"] = m.n;
  j["set_size"] = m.set_size;
  j["mean"] = region(m.mean);
  j["heads"] = nlohmann::ordered_json::array();
  for (const RegionMass& r : m.heads) j["heads"].push_back(region(r));
  return j.dump(2);
}

std::string to_table(const MassCensus& m) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "layer %zu, query position %zu, |C| = %zu of %zu\n", m.layer, m.query_pos,
                m.set_size, m.n);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-22s %s\n", "region", "mass");
  out += buf;
  const std::pair<const char*, double> rows[] = {{"anchor (pos 0)", m.mean.anchor},
                                                 {"local window", m.mean.window},
                                                 {"dynamic top-k", m.mean.dynamic},
                                                 {"condensate total", m.mean.condensate()},
                                                 {"middle (excluded)", m.mean.middle}};
  for (const auto& [name, v] : rows) {
    std::snprintf(buf, sizeof buf, "%-22s %.2f%%\n", name, 100.0 * v);
    out += buf;
  }
  return out;
}

}  // namespace topo
