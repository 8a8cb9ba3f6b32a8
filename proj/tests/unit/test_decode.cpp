// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>

#include "doctest.h"
#include "json.hpp"
#include "topo/decode.hpp"

using namespace topo;

namespace {

Model model_of(SynthKind kind, std::size_t kv, bool rope, std::uint64_t seed, std::size_t max_seq = 4096) {
  ModelSpec s = desk_spec(kv, rope);
  s.max_seq = max_seq;
  SynthRecipe r;
  r.kind = kind;
  r.seed = seed;
  return synth_model(s, r);
}

CondensateConfig sparse_config(const Model& m) {
  CondensateConfig c;
  c.pillar_layers = default_pillars(m.spec.n_layers);
  return c;
}

bool same_bits(const Vec32& a, const Vec32& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

// Dense greedy decoding recomputed from scratch for every position.
std::vector<Vec32> recompute_logits(const Model& m, std::vector<TokenId> seq, std::size_t steps,
                                    std::vector<TokenId>* tokens) {
  std::vector<Vec32> out;
  for (std::size_t i = 0; i <= steps; ++i) {
    out.push_back(full_forward(m, seq).logits.back());
    const auto t = static_cast<TokenId>(argmax_det(out.back()));
    tokens->push_back(t);
    seq.push_back(t);
  }
  return out;
}

}  // namespace

TEST_SUITE("decode") {
  TEST_CASE("all-pillar decoding equals dense recomputation bit for bit") {
    for (bool rope : {false, true}) {
      const Model m = model_of(SynthKind::kRandom, 2, rope, 21);
      const auto prompt = filler_prompt(m.spec, 17, 3);
      std::vector<TokenId> expect;
      const auto logits = recompute_logits(m, prompt, 12, &expect);
      DecodeSession s(m, dense_config(m.spec.n_layers));
      TokenId t = s.prefill(prompt);
      CHECK(same_bits(s.logits(), logits[0]));
      CHECK(t == expect[0]);
      for (std::size_t i = 1; i <= 12; ++i) {
        t = s.step(t);
        CHECK(t == expect[i]);
        CHECK(same_bits(s.logits(), logits[i]));
      }
    }
  }

  TEST_CASE("short contexts make sparse layers see everything") {
    const Model m = model_of(SynthKind::kRandom, 4, true, 22);
    const auto prompt = filler_prompt(m.spec, 10, 4);
    CondensateConfig cfg = sparse_config(m);
    cfg.pillar_layers = {};
    const auto sparse = generate(m, prompt, cfg, 50, {.retention = Retention::kFull, .ulp_diagnostics = true});
    const auto dense = generate(m, prompt, dense_config(m.spec.n_layers), 50);
    CHECK(sparse.tokens == dense.tokens);
    for (const auto& d : sparse.steps) {
      CHECK(d.ulp_exact());
      for (const auto& l : d.layers) CHECK(l.set_size == d.length);
    }
  }

  TEST_CASE("prefill basics") {
    const Model m = model_of(SynthKind::kRandom, 8, false, 23);
    DecodeSession a(m, sparse_config(m));
    const std::vector<TokenId> one{0};
    a.prefill(one);
    CHECK(a.cache().length() == 1);
    const auto prompt = filler_prompt(m.spec, 30, 5);
    DecodeSession b(m, sparse_config(m)), c(m, sparse_config(m));
    CHECK(b.prefill(prompt) == c.prefill(prompt));
    CHECK(same_bits(b.logits(), c.logits()));
    for (std::size_t l = 0; l < 4; ++l) {
      const auto kb = b.cache().keys(l, 3).data;
      const auto kc = c.cache().keys(l, 3).data;
      CHECK(std::equal(kb.begin(), kb.end(), kc.begin(), kc.end()));
    }
    CHECK(b.diagnostics().ops == prefill_ops(m.spec, 30));
    CHECK_THROWS_AS(b.prefill(prompt), Error);
    DecodeSession e(m, sparse_config(m));
    CHECK_THROWS_AS(e.prefill(std::vector<TokenId>{}), Error);
    CHECK_THROWS_AS(e.step(3), Error);
  }

  TEST_CASE("prefill ops grow quadratically") {
    const ModelSpec s = desk_spec(8, false);
    CHECK(prefill_ops(s, 1) == kOpsPerKeyDim * 4 * 8 * 32);
    CHECK(prefill_ops(s, 1000) == kOpsPerKeyDim * 4 * 8 * 32 * 500500);
    const double r = static_cast<double>(prefill_ops(s, 20000)) / static_cast<double>(prefill_ops(s, 10000));
    CHECK(r == doctest::Approx(4.0).epsilon(1e-3));
  }

  TEST_CASE("generate stopping rules") {
    const Model m = model_of(SynthKind::kRandom, 8, false, 24);
    const auto prompt = filler_prompt(m.spec, 12, 6);
    const auto none = generate(m, prompt, sparse_config(m), 0);
    CHECK(none.tokens.empty());
    CHECK(none.steps.empty());
    CHECK(none.prefill.prefill);
    const auto some = generate(m, prompt, sparse_config(m), 7);
    CHECK(some.tokens.size() == 7);
    CHECK(some.steps.size() == 6);

    // All-zero logits pick token 0, which this spec declares as EOS.
    Model z = m;
    z.spec.eos_token = 0;
    z.lm_head = Mat32(z.spec.vocab_size, z.spec.model_dim, 0.0f);
    const auto eos = generate(z, prompt, sparse_config(z), 50);
    CHECK(eos.tokens == std::vector<TokenId>{0});
  }

  TEST_CASE("concentrated models decode exactly with two pillar layers") {
    for (std::size_t kv : {8u, 2u, 1u}) {
      const Model m = model_of(SynthKind::kConcentrated, kv, kv != 8, 30 + kv);
      const auto prompt = filler_prompt(m.spec, 400, 7);
      const auto sparse = generate(m, prompt, sparse_config(m), 60, {.retention = Retention::kFull, .ulp_diagnostics = true});
      const auto dense = generate(m, prompt, dense_config(m.spec.n_layers), 60);
      CHECK(sparse.tokens == dense.tokens);
      for (const auto& d : sparse.steps) {
        CHECK(d.ulp_exact());
        for (const auto& l : d.layers) CHECK((l.pillar || l.set_size <= 128));
        REQUIRE(d.condensate_mass.has_value());
        CHECK(*d.condensate_mass > 0.999);
      }
    }
  }

  TEST_CASE("persistent set equals positions whose spike count reached the threshold") {
    const Model m = model_of(SynthKind::kConcentrated, 2, true, 40);
    CondensateConfig cfg = sparse_config(m);
    for (std::size_t tau : {1u, 2u, 5u}) {
      cfg.persist_threshold = tau;
      DecodeSession s(m, cfg);
      TokenId t = s.prefill(filler_prompt(m.spec, 300, 8));
      for (int i = 0; i < 20; ++i) {
        t = s.step(t);
        for (const auto& [pos, count] : s.tracker().counts()) {
          CHECK(count >= 1);
          CHECK(pos < s.cache().length());
          CHECK(s.persistent().contains(pos) == (count >= tau));
        }
        for (std::size_t p : s.persistent().positions()) CHECK(s.tracker().count(p) >= tau);
      }
    }
  }

  TEST_CASE("eviction keeps anchor, window and persistent positions as exact copies") {
    const Model m = model_of(SynthKind::kConcentrated, 2, true, 41);
    const auto prompt = filler_prompt(m.spec, 1200, 9);
    CondensateConfig cfg = sparse_config(m);
    DecodeSession full(m, cfg);
    DecodeSession ev(m, cfg, {.retention = Retention::kEvict, .ulp_diagnostics = false});
    TokenId a = full.prefill(prompt);
    TokenId b = ev.prefill(prompt);
    CHECK(a == b);
    for (int i = 0; i < 150; ++i) {
      a = full.step(a);
      b = ev.step(b);
      REQUIRE(a == b);
      const KVCache& c = ev.cache();
      CHECK(c.resident() <= 1 + cfg.w_max + ev.persistent().size());
      CHECK(c.slot_of(0).has_value());
      for (std::size_t p = c.length() - cfg.w_max; p < c.length(); ++p) CHECK(c.slot_of(p).has_value());
      for (std::size_t p : ev.persistent().positions()) CHECK(c.slot_of(p).has_value());
    }
    const KVCache& c = ev.cache();
    for (std::size_t l = 0; l < m.spec.n_layers; ++l) {
      for (std::size_t h = 0; h < m.spec.n_kv_heads; ++h) {
        for (std::size_t slot = 0; slot < c.resident(); ++slot) {
          const std::size_t pos = c.positions()[slot];
          const auto x = c.keys(l, h).row(slot);
          const auto y = full.cache().keys(l, h).row(pos);
          CHECK(std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
          const auto vx = c.values(l, h).row(slot);
          const auto vy = full.cache().values(l, h).row(pos);
          CHECK(std::memcmp(vx.data(), vy.data(), vx.size() * sizeof(float)) == 0);
        }
      }
    }
  }

  TEST_CASE("eviction is a no-op below w_max") {
    const Model m = model_of(SynthKind::kConcentrated, 8, false, 42);
    DecodeSession ev(m, sparse_config(m), {.retention = Retention::kEvict, .ulp_diagnostics = false});
    TokenId t = ev.prefill(filler_prompt(m.spec, 100, 10));
    for (int i = 0; i < 20; ++i) t = ev.step(t);
    CHECK(ev.cache().resident() == 120);
    DecodeSession full(m, sparse_config(m));
    CHECK_THROWS_AS(full.evict(), Error);
  }

  TEST_CASE("needle answers come from sets that contain the needle") {
    const Model m = model_of(SynthKind::kConcentrated, 2, true, 43);
    std::vector<Fact> facts;
    for (std::size_t i = 0; i < 4; ++i) facts.push_back(slot_fact(m.spec, i));
    const NeedlePrompt p = plant_needle_prompt(m.spec, facts, 2000, 2);
    const CondensateConfig cfg = sparse_config(m);
    DecodeSession s(m, cfg);
    const std::span<const TokenId> all(p.tokens);
    TokenId t = s.prefill(all.first(all.size() - 1));
    (void)t;
    t = s.step(p.tokens.back());
    CHECK(t == p.expected_answer[0]);
    const std::size_t needle = p.needle_positions[2];
    for (std::size_t l = 0; l < m.spec.n_layers; ++l) {
      if (cfg.is_pillar(l)) continue;
      bool hit = false;
      for (const auto& set : s.sets(l)) hit = hit || set.contains(needle);
      CHECK(hit);
    }
  }

  TEST_CASE("op counts") {
    ModelSpec big = desk_spec(8, false);
    big.n_layers = 32;
    const std::uint64_t n = 131072;
    const std::uint64_t per_head = kOpsPerKeyDim * big.n_heads * big.head_dim;
    const std::uint64_t actual = per_head * (2 * n + 30 * 97);
    CHECK(dense_step_ops(big, n) == per_head * 32 * n);
    const double ratio = static_cast<double>(dense_step_ops(big, n)) / static_cast<double>(actual);
    CHECK(ratio == doctest::Approx(15.8).epsilon(0.005));
    CHECK(static_cast<double>(actual) / per_head / 32 == doctest::Approx(8283).epsilon(0.001));

    // No pillars: sparse ops do not move when N doubles; dense-equivalent does.
    const Model m = model_of(SynthKind::kConcentrated, 8, false, 44, 2048);
    CondensateConfig cfg = sparse_config(m);
    cfg.pillar_layers = {};
    std::uint64_t ops[2], dense[2];
    for (int i = 0; i < 2; ++i) {
      const auto r = generate(m, filler_prompt(m.spec, 400 << i, 11), cfg, 2);
      ops[i] = r.steps.back().ops;
      dense[i] = r.steps.back().ops_dense;
    }
    CHECK(ops[0] == ops[1]);
    CHECK(ops[0] == kOpsPerKeyDim * m.spec.n_layers * m.spec.n_heads * 97 * m.spec.head_dim);
    CHECK(dense[1] == dense_step_ops(m.spec, 801));
    CHECK(dense[0] == dense_step_ops(m.spec, 401));
  }

  TEST_CASE("op counts are monotone in pillars and budget") {
    const Model m = model_of(SynthKind::kConcentrated, 2, false, 45);
    const auto prompt = filler_prompt(m.spec, 600, 12);
    std::uint64_t prev = 0;
    for (const std::vector<std::size_t>& p : std::vector<std::vector<std::size_t>>{{}, {0}, {0, 2}, {0, 1, 2}, {0, 1, 2, 3}}) {
      CondensateConfig cfg = sparse_config(m);
      cfg.pillar_layers = p;
      const auto r = generate(m, prompt, cfg, 5);
      CHECK(r.ops_actual >= prev);
      prev = r.ops_actual;
    }
    prev = 0;
    for (std::size_t cap : {97u, 110u, 128u, 200u}) {
      CondensateConfig cfg = sparse_config(m);
      cfg.budget_cap = cap;
      const auto r = generate(m, prompt, cfg, 5);
      CHECK(r.ops_actual >= prev);
      prev = r.ops_actual;
    }
  }

  TEST_CASE("trace lines are json with the documented keys") {
    const Model m = model_of(SynthKind::kConcentrated, 8, false, 46);
    const auto r = generate(m, filler_prompt(m.spec, 100, 13), sparse_config(m), 4,
                            {.retention = Retention::kFull, .ulp_diagnostics = true});
    const std::string text = to_jsonl(r);
    std::size_t lines = 0, start = 0;
    while (start < text.size()) {
      const std::size_t end = text.find('\n', start);
      const auto j = nlohmann::json::parse(text.substr(start, end - start));
      for (const char* key : {"mode", "step", "position", "token", "n", "resident", "ops", "ops_dense", "layers"}) {
        CHECK(j.contains(key));
      }
      CHECK(j["layers"].size() == 4);
      ++lines;
      start = end + 1;
    }
    CHECK(lines == 1 + r.steps.size());
  }
}
