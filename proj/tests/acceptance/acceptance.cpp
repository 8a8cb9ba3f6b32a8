// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
// Optional argv: substrings selecting which criteria to run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "topo/bench.hpp"
#include "topo/decode.hpp"
#include "topo/lab.hpp"

using namespace topo;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

Model model_of(SynthKind kind, std::size_t kv, bool rope, std::uint64_t seed) {
  SynthRecipe r;
  r.kind = kind;
  r.seed = seed;
  return synth_model(desk_spec(kv, rope), r);
}

CondensateConfig sparse_config(const Model& m) {
  CondensateConfig c;
  c.window = 64;
  c.topk = 32;
  c.pillar_layers = default_pillars(m.spec.n_layers);
  return c;
}

// ---------------------------------------------------------------------------

Outcome degenerate_equivalence() {
  std::size_t steps_checked = 0, mismatches = 0;
  const std::size_t kv_options[] = {8, 2, 1};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model m = model_of(SynthKind::kRandom, kv_options[seed % 3], seed % 2 == 0, 100 + seed);
    CondensateConfig all = sparse_config(m);
    all.pillar_layers.clear();
    for (std::size_t l = 0; l < m.spec.n_layers; ++l) all.pillar_layers.push_back(l);
    for (std::uint64_t p = 0; p < 5; ++p) {
      const auto prompt = filler_prompt(m.spec, 8 + 13 * p, seed * 10 + p);
      const GenerationResult gen = generate(m, prompt, all, 101);
      DecodeSession s(m, all);
      TokenId t = s.prefill(prompt);
      std::vector<TokenId> seq(prompt.begin(), prompt.end());
      std::vector<Vec32> logits{s.logits()};
      for (std::size_t i = 0; i < 100; ++i) {
        seq.push_back(t);
        t = s.step(t);
        logits.push_back(s.logits());
      }
      // Oracle: one dense batch forward over the whole generated sequence.
      const ForwardResult fr = full_forward(m, seq, {.all_logits = true, .capture_layer = {}});
      // generate() stops after EOS, so its tokens are the oracle's greedy tokens up to the first EOS.
      std::vector<TokenId> expect;
      for (std::size_t i = 0; i <= 100; ++i) {
        const Vec32& ref = fr.logits[prompt.size() - 1 + i];
        const auto ref_tok = static_cast<TokenId>(argmax_det(ref));
        const bool tok_ok = i == 100 || seq[prompt.size() + i] == ref_tok;
        if (!same_bits(logits[i], ref) || !tok_ok) ++mismatches;
        if (i > 0) ++steps_checked;
        if (expect.empty() || expect.back() != m.spec.eos_token) expect.push_back(ref_tok);
      }
      if (gen.tokens != expect) ++mismatches;
    }
  }
  return {mismatches == 0 && steps_checked == 5000,
          fmt("10 models x 5 prompts x 100 steps: %zu steps, %zu mismatches vs dense batch forward", steps_checked,
              mismatches)};
}

// Shared by the token-match and ULP criteria.
struct ConcentratedRuns {
  std::vector<std::string> names;
  std::vector<EquivalenceReport> reports;
};

const ConcentratedRuns& concentrated_runs() {
  static const ConcentratedRuns runs = [] {
    ConcentratedRuns r;
    for (std::size_t kv : {8UL, 2UL, 1UL}) {
      for (bool rope : {true, false}) {
        const Model m = model_of(SynthKind::kConcentrated, kv, rope, 7 + kv);
        const std::vector<std::vector<TokenId>> prompts{filler_prompt(m.spec, 700, 1), filler_prompt(m.spec, 1948, 2)};
        EquivalenceOptions eo;
        eo.steps_per_prompt = 50;
        eo.ulp_diagnostics = true;
        r.names.push_back(fmt("%s/%s", kv == 8 ? "MHA" : kv == 2 ? "GQA4:1" : "GQA8:1", rope ? "rope" : "norope"));
        r.reports.push_back(run_equivalence(m, prompts, sparse_config(m), eo));
      }
    }
    return r;
  }();
  return runs;
}

Outcome exact_token_match() {
  const ConcentratedRuns& runs = concentrated_runs();
  std::size_t tokens = 0;
  bool ok = runs.reports.size() == 6;
  std::string worst;
  for (std::size_t i = 0; i < runs.reports.size(); ++i) {
    const EquivalenceReport& r = runs.reports[i];
    tokens += r.tokens_compared;
    const bool good = r.oracle_feasible && r.top1_match == 1.0 && r.top5_match == 1.0;
    ok = ok && good;
    if (!good) worst += fmt(" %s(top1=%.4f top5=%.4f)", runs.names[i].c_str(), r.top1_match, r.top5_match);
  }
  ok = ok && tokens >= 500;
  return {ok, fmt("6 models, %zu tokens, prompts <= 2048, top-1 and top-5 %s%s", tokens,
                  worst.empty() ? "100%" : "below 100%:", worst.c_str())};
}

Outcome ulp_soundness() {
  const ConcentratedRuns& runs = concentrated_runs();
  std::size_t steps = 0, exact = 0, unsound = 0;
  for (const EquivalenceReport& r : runs.reports) {
    steps += r.tokens_compared;
    exact += r.ulp_exact_steps;
    unsound += r.ulp_unsound_steps;
  }
  const double frac = steps > 0 ? static_cast<double>(exact) / static_cast<double>(steps) : 0.0;
  return {unsound == 0 && frac >= 0.95 && steps > 0,
          fmt("%zu/%zu steps ulp_exact (%.2f%%, need >= 95%%), %zu exact steps not bit-identical", exact, steps,
              100.0 * frac, unsound)};
}

Outcome negative_control() {
  bool ok = true;
  std::string detail;
  const std::size_t kv_options[] = {8, 2, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    const Model m = model_of(SynthKind::kRandom, kv_options[i], i == 1, 300 + i);
    CondensateConfig wo = sparse_config(m);
    wo.topk = 0;
    wo.k_spike = 0;
    wo.pillar_layers.clear();
    const std::vector<std::vector<TokenId>> prompts{filler_prompt(m.spec, 512, 30 + i)};
    EquivalenceOptions eo;
    eo.steps_per_prompt = 100;
    eo.ulp_diagnostics = false;
    const EquivalenceReport r = run_equivalence(m, prompts, wo, eo);
    ok = ok && r.oracle_feasible && r.top1_match < 0.90 && r.min_cosine < 0.9;
    detail += fmt(" kv=%zu: top1=%.3f min_cos=%.3f;", kv_options[i], r.top1_match, r.min_cosine);
  }
  return {ok, "random models, anchor+window only, N=512:" + detail};
}

struct SupportStats {
  std::size_t steps = 0, final_n = 0, max_set = 0, max_persistent = 0;
};

// Exactly `steps` decode steps (no EOS stop), tracking the largest sparse-layer set.
SupportStats decode_support(const Model& m, std::span<const TokenId> prompt, const CondensateConfig& cfg,
                            std::size_t steps) {
  DecodeSession s(m, cfg);
  TokenId t = s.prefill(prompt);
  SupportStats st;
  for (std::size_t i = 0; i < steps; ++i) {
    t = s.step(t);
    const StepDiagnostics& d = s.diagnostics();
    for (const LayerDiagnostics& l : d.layers) {
      if (!l.pillar) st.max_set = std::max(st.max_set, l.set_size);
    }
    st.max_persistent = std::max(st.max_persistent, d.persistent);
    st.final_n = d.length;
    ++st.steps;
  }
  return st;
}

Outcome bounded_support() {
  bool ok = true;
  std::string detail;
  for (SynthKind kind : {SynthKind::kConcentrated, SynthKind::kRandom}) {
    const Model m = model_of(kind, 2, true, 51);
    const auto prompt = filler_prompt(m.spec, 3096, 5);
    const CondensateConfig cfg = sparse_config(m);
    const SupportStats with = decode_support(m, prompt, cfg, 1000);
    CondensateConfig no_persist = cfg;
    no_persist.k_spike = 0;
    const SupportStats without = decode_support(m, prompt, no_persist, 1000);
    ok = ok && with.steps == 1000 && with.final_n == 4096 && with.max_set <= cfg.budget_cap &&
         without.max_persistent == 0 && without.max_set == 97;
    detail += fmt(" %s: steps=%zu N=%zu max|C|=%zu (|S|<=%zu), empty S max|C|=%zu;",
                  kind == SynthKind::kConcentrated ? "concentrated" : "random", with.steps, with.final_n, with.max_set,
                  with.max_persistent, without.max_set);
  }
  return {ok, "B_max=128, exact 97 with empty S:" + detail};
}

Outcome mass_scaling() {
  const Model m = model_of(SynthKind::kConcentrated, 2, true, 61);
  const auto prompt = filler_prompt(m.spec, 2048, 6);
  CondensateConfig cfg;
  cfg.window = 64;
  cfg.topk = 0;
  std::vector<double> mass;
  std::size_t set = 0;
  for (std::size_t n : {128UL, 512UL, 2048UL}) {
    const MassCensus mc = mass_census(m, prompt, m.spec.n_layers / 2, n - 1, cfg);
    mass.push_back(mc.mean.condensate());
    set = std::max(set, mc.set_size);
  }
  return {set == 65 && mass[2] > mass[1] && mass[1] > mass[0],
          fmt("65-position set (|C|=%zu), layer L/2 mean mass: n=128 %.6f, n=512 %.6f, n=2048 %.6f", set, mass[0],
              mass[1], mass[2])};
}

Outcome needle_retrieval() {
  bool ok = true;
  std::string detail;
  for (std::size_t n : {1024UL, 8192UL, 65536UL, 262144UL}) {
    NeedleCacheSpec spec;
    spec.n = n;
    spec.needles = 4;
    spec.seed = n;
    CondensateConfig dyn;
    dyn.window = 64;
    dyn.topk = 32;
    CondensateConfig stat = dyn;
    stat.topk = 0;
    const NeedleReport d = run_needle_cache(spec, dyn);
    const NeedleReport s = run_needle_cache(spec, stat);
    bool only_window = true, subset = true, any_out = false;
    for (std::size_t i = 0; i < 4; ++i) {
      only_window = only_window && s.needles[i].found == s.needles[i].in_window;
      subset = subset && (!s.needles[i].found || d.needles[i].found);
      any_out = any_out || !s.needles[i].in_window;
    }
    const bool strict = !any_out || s.found() < d.found();
    ok = ok && d.found() == 4 && only_window && subset && strict;
    detail += fmt(" N=%zu dynamic %zu/4 static %zu/4;", n, d.found(), s.found());
  }
  return {ok, "synthetic cache, 4 needles:" + detail};
}

Outcome op_scaling() {
  BenchConfig cfg;
  cfg.n_list = {8192, 16384, 32768, 65536, 131072, 262144};
  cfg.repeats = 21;
  cfg.warmup = 3;
  cfg.dense_max_n = 16384;
  cfg.condensate.window = 64;
  cfg.condensate.topk = 32;
  const std::vector<BenchRecord> recs = run_scaling(cfg);
  std::vector<double> n, sparse, dense, prefill;
  std::optional<double> speedup;
  for (const BenchRecord& r : recs) {
    n.push_back(static_cast<double>(r.n));
    sparse.push_back(static_cast<double>(r.ops_sparse));
    dense.push_back(static_cast<double>(r.ops_dense));
    prefill.push_back(static_cast<double>(r.ops_prefill));
    if (r.n == 16384) speedup = r.speedup();
  }
  const double ss = fit_loglog(n, sparse).slope, ds = fit_loglog(n, dense).slope, ps = fit_loglog(n, prefill).slope;
  // Whole-model counters follow the same laws.
  const ModelSpec spec = desk_spec(8, false);
  std::vector<double> md, mp;
  for (double x : n) {
    md.push_back(static_cast<double>(dense_step_ops(spec, static_cast<std::size_t>(x))));
    mp.push_back(static_cast<double>(prefill_ops(spec, static_cast<std::size_t>(x))));
  }
  const double mds = fit_loglog(n, md).slope, mps = fit_loglog(n, mp).slope;
  const bool ok = std::abs(ss) < 0.05 && std::abs(ds - 1.0) <= 0.02 && std::abs(ps - 2.0) <= 0.05 &&
                  std::abs(mds - 1.0) <= 0.02 && std::abs(mps - 2.0) <= 0.05 && speedup && *speedup >= 20.0;
  return {ok, fmt("N=8K..262K slopes: sparse %.4f, dense step %.4f (model %.4f), dense prefill %.4f (model %.4f); "
                  "speedup at 16K %.1fx (need >= 20x)",
                  ss, ds, mds, ps, mps, speedup.value_or(0.0))};
}

Outcome extrapolation() {
  const double t = extrapolate_quadratic(627.58, 131072, 1048576);
  return {std::abs(t - 40165.0) <= 1.0, fmt("627.58 ms @ 131072 -> %.2f ms @ 1048576 (expect 40165 +- 1)", t)};
}

Outcome kv_eviction() {
  bool ok = true;
  std::string detail;
  const std::pair<std::size_t, bool> models[] = {{2, true}, {8, false}};
  for (const auto& [kv, rope] : models) {
    const Model m = model_of(SynthKind::kConcentrated, kv, rope, 71 + kv);
    const auto prompt = filler_prompt(m.spec, 9900, 7);
    const CondensateConfig cfg = sparse_config(m);
    DecodeSession full(m, cfg);
    DecodeSession ev(m, cfg, {.retention = Retention::kEvict, .ulp_diagnostics = false});
    TokenId a = full.prefill(prompt);
    TokenId b = ev.prefill(prompt);
    bool tokens_same = a == b;
    std::size_t max_over = 0, max_resident = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      a = full.step(a);
      b = ev.step(b);
      tokens_same = tokens_same && a == b;
      const std::size_t limit = 257 + ev.persistent().size();
      max_resident = std::max(max_resident, ev.cache().resident());
      if (ev.cache().resident() > limit) ++max_over;
    }
    const KVCache& c = ev.cache();
    std::size_t diff = 0;
    for (std::size_t l = 0; l < m.spec.n_layers; ++l) {
      for (std::size_t h = 0; h < m.spec.n_kv_heads; ++h) {
        for (std::size_t slot = 0; slot < c.resident(); ++slot) {
          const std::size_t pos = c.positions()[slot];
          diff += same_bits(c.keys(l, h).row(slot), full.cache().keys(l, h).row(pos)) ? 0 : 1;
          diff += same_bits(c.values(l, h).row(slot), full.cache().values(l, h).row(pos)) ? 0 : 1;
        }
      }
    }
    const bool good = c.length() == 10000 && tokens_same && max_over == 0 && diff == 0;
    ok = ok && good;
    detail += fmt(" kv=%zu%s: N=%zu resident<=%zu (|S|=%zu), %zu differing rows, tokens %s;", kv,
                  rope ? " rope" : "", c.length(), max_resident, ev.persistent().size(), diff,
                  tokens_same ? "identical" : "DIFFER");
  }
  return {ok, "evict vs full retention:" + detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {"degenerate-equivalence", 60, degenerate_equivalence},
      {"exact-token-match", 300, exact_token_match},
      {"ulp-soundness", 300, ulp_soundness},
      {"negative-control", 120, negative_control},
      {"bounded-support", 120, bounded_support},
      {"mass-scaling", 180, mass_scaling},
      {"needle-retrieval", 180, needle_retrieval},
      {"op-count-scaling", 600, op_scaling},
      {"extrapolation", 1, extrapolation},
      {"kv-eviction", 180, kv_eviction},
  };
  int failures = 0;
  for (const Criterion& c : all) {
    bool selected = argc < 2;
    for (int i = 1; i < argc; ++i) selected = selected || c.name.find(argv[i]) != std::string::npos;
    if (!selected) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s %-24s %s [%.1fs, budget %.0fs%s]\n", pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(),
                secs, c.budget_s, in_time ? "" : ", OVER BUDGET");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
