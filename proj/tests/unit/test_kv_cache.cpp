// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"
#include "topo/kv_cache.hpp"

using namespace topo;

namespace {

ModelSpec cache_spec() {
  ModelSpec s;
  s.n_layers = 2;
  s.n_heads = 4;
  s.n_kv_heads = 2;
  s.head_dim = 4;
  s.model_dim = 16;
  s.max_seq = 100;
  return s;
}

// Fills position p of every (layer, head) with values derived from (p, layer, head).
void push(KVCache& c, std::size_t p) {
  c.open_position(100);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t h = 0; h < 2; ++h) {
      const float base = static_cast<float>(p * 100 + l * 10 + h);
      const Vec32 k{base, base + 0.25f, base + 0.5f, base + 0.75f};
      const Vec32 v{-base, -base, -base, -base};
      c.append(l, h, k, v);
    }
  }
}

}  // namespace

TEST_SUITE("kv_cache") {
  TEST_CASE("append and read back") {
    KVCache c(cache_spec(), Retention::kFull);
    for (std::size_t p = 0; p < 5; ++p) push(c, p);
    CHECK(c.length() == 5);
    CHECK(c.resident() == 5);
    CHECK(c.keys(1, 1).rows() == 5);
    CHECK(c.keys(1, 1).row(3)[0] == 311.0f);
    CHECK(c.values(0, 1).row(2)[2] == -201.0f);
    const KeyColumns cols = c.key_columns(1, 0);
    CHECK(cols.rows() == 5);
    CHECK(cols.cols[1][4] == 410.25f);
    CHECK(c.slot_of(4) == 4);
    CHECK_FALSE(c.slot_of(5).has_value());
  }

  TEST_CASE("positions must be completed before the next opens") {
    KVCache c(cache_spec(), Retention::kFull);
    c.open_position(100);
    const Vec32 k(4, 0.0f);
    c.append(0, 0, k, k);
    CHECK_THROWS_AS(c.open_position(100), Error);
    CHECK_THROWS_AS(c.append(0, 0, k, k), Error);
    CHECK_THROWS_AS(c.append(0, 5, k, k), Error);
    CHECK_THROWS_AS(c.append(0, 1, Vec32(3), k), Error);
  }

  TEST_CASE("max_seq overflow") {
    KVCache c(cache_spec(), Retention::kFull);
    c.open_position(1);
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t h = 0; h < 2; ++h) c.append(l, h, Vec32(4), Vec32(4));
    }
    CHECK_THROWS_AS(c.open_position(1), Error);
  }

  TEST_CASE("retain keeps exact copies and remaps slots") {
    KVCache full(cache_spec(), Retention::kFull);
    KVCache ev(cache_spec(), Retention::kEvict);
    for (std::size_t p = 0; p < 20; ++p) {
      push(full, p);
      push(ev, p);
    }
    const std::vector<std::size_t> keep{0, 3, 7, 15, 16, 17, 18, 19};
    ev.retain(keep);
    CHECK(ev.length() == 20);
    CHECK(ev.resident() == keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      CHECK(ev.slot_of(keep[i]) == i);
      for (std::size_t l = 0; l < 2; ++l) {
        for (std::size_t h = 0; h < 2; ++h) {
          const auto a = ev.keys(l, h).row(i);
          const auto b = full.keys(l, h).row(keep[i]);
          CHECK(std::equal(a.begin(), a.end(), b.begin()));
          const auto va = ev.values(l, h).row(i);
          const auto vb = full.values(l, h).row(keep[i]);
          CHECK(std::equal(va.begin(), va.end(), vb.begin()));
          CHECK(ev.key_columns(l, h).cols[2][i] == b[2]);
        }
      }
    }
    CHECK_FALSE(ev.slot_of(5).has_value());
    // New positions land after the retained ones.
    push(ev, 20);
    CHECK(ev.slot_of(20) == keep.size());
    CHECK(ev.keys(0, 0).row(keep.size())[0] == 2000.0f);
  }

  TEST_CASE("retain rejects bad requests") {
    KVCache full(cache_spec(), Retention::kFull);
    push(full, 0);
    const std::vector<std::size_t> zero{0};
    CHECK_THROWS_AS(full.retain(zero), Error);
    KVCache ev(cache_spec(), Retention::kEvict);
    for (std::size_t p = 0; p < 6; ++p) push(ev, p);
    const std::vector<std::size_t> unsorted{0, 4, 2};
    CHECK_THROWS_AS(ev.retain(unsorted), Error);
    const std::vector<std::size_t> first{0, 2, 5};
    ev.retain(first);
    const std::vector<std::size_t> gone{0, 3, 5};
    CHECK_THROWS_AS(ev.retain(gone), Error);
  }
}
