// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/decode.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "json.hpp"

namespace topo {

std::size_t SpikeTracker::record(std::size_t pos) { return ++counts_[pos]; }

std::size_t SpikeTracker::count(std::size_t pos) const {
  auto it = counts_.find(pos);
  return it == counts_.end() ? 0 : it->second;
}

bool StepDiagnostics::ulp_exact() const {
  for (const LayerDiagnostics& l : layers) {
    if (l.pillar) continue;
    if (!l.ulp_exact.has_value() || !*l.ulp_exact) return false;
  }
  return true;
}

std::string to_json(const StepDiagnostics& d) {
  nlohmann::ordered_json j;
  j["mode"] = d.prefill ? "prefill" : "decode";
  j["step"] = d.step;
  j["position"] = d.position;
  j["token"] = d.token;
  j["n"] = d.length;
  j["resident"] = d.resident;
  j["window"] = d.window;
  j["persistent"] = d.persistent;
  j["ops"] = d.ops;
  j["ops_dense"] = d.ops_dense;
  j["condensate_mass"] = d.condensate_mass ? nlohmann::ordered_json(*d.condensate_mass) : nullptr;
  auto layers = nlohmann::ordered_json::array();
  for (const LayerDiagnostics& l : d.layers) {
    nlohmann::ordered_json lj;
    lj["mode"] = l.pillar ? "pillar" : "sparse";
    lj["set"] = l.set_size;
    lj["ulp_exact"] = l.ulp_exact ? nlohmann::ordered_json(*l.ulp_exact) : nullptr;
    lj["ops"] = l.ops;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  return j.dump();
}

std::string to_jsonl(const GenerationResult& r) {
  std::string out = to_json(r.prefill) + "\n";
  for (const StepDiagnostics& s : r.steps) out += to_json(s) + "\n";
  return out;
}

std::uint64_t dense_step_ops(const ModelSpec& spec, std::size_t n) {
  return kOpsPerKeyDim * spec.n_layers * spec.n_heads * n * spec.head_dim;
}

std::uint64_t prefill_ops(const ModelSpec& spec, std::size_t m) {
  const std::uint64_t tri = static_cast<std::uint64_t>(m) * (m + 1) / 2;
  return kOpsPerKeyDim * spec.n_layers * spec.n_heads * spec.head_dim * tri;
}

// ---------------------------------------------------------------------------

class DecodeSession::Router : public AttentionRouter {
 public:
  explicit Router(DecodeSession& s) : s_(s), dense_(s.model_.spec) {}

  bool prefill = true;
  bool record_prefill_spikes = false;  // last prompt position
  std::size_t window = 0;
  StepDiagnostics* diag = nullptr;

  void attend(std::size_t layer, std::span<const float> q, const KVCache& cache, std::span<float> out) override {
    if (prefill && !(record_prefill_spikes && s_.cfg_.is_pillar(layer))) {
      dense_.attend(layer, q, cache, out);
    } else if (s_.cfg_.is_pillar(layer)) {
      pillar(layer, q, cache, out);
    } else {
      sparse(layer, q, cache, out);
    }
  }

 private:
  void pillar(std::size_t layer, std::span<const float> q, const KVCache& cache, std::span<float> out) {
    const ModelSpec& spec = s_.model_.spec;
    const std::size_t d = spec.head_dim;
    const std::size_t n_res = cache.resident();
    const auto positions = cache.positions();
    const CondensateConfig& cfg = s_.cfg_;
    for (std::size_t h = 0; h < spec.n_heads; ++h) {
      const std::size_t kv = spec.kv_head_of(h);
      const KeyColumns cols = cache.key_columns(layer, kv);
      dense_attend_into(q.subspan(h * d, d), cache.keys(layer, kv), cache.values(layer, kv), out.subspan(h * d, d),
                        &row_, &cols);
      for (std::size_t slot : topk_scores(row_.scores, n_res, cfg.k_spike)) {
        const std::size_t pos = positions[slot];
        if (s_.tracker_.record(pos) >= cfg.persist_threshold) s_.persistent_.insert(pos, s_.steps_);
      }
    }
    if (diag == nullptr) return;
    LayerDiagnostics& ld = diag->layers[layer];
    ld.pillar = true;
    ld.set_size = n_res;
    ld.ops = kOpsPerKeyDim * spec.n_heads * n_res * d;
  }

  void refresh_index(std::size_t layer, std::size_t kv, const KVCache& cache, std::size_t win_begin) {
    KeyNormIndex& idx = s_.norm_index_[layer][kv];
    const RowsView keys = cache.keys(layer, kv);
    const auto positions = cache.positions();
    const bool evict = cache.retention() == Retention::kEvict;
    if (s_.index_stale_ || idx.offered_upto > std::max<std::size_t>(win_begin, 1)) {
      idx.clear(s_.cfg_.topk);
      if (evict) {
        for (std::size_t slot = 0; slot < positions.size() && positions[slot] < win_begin; ++slot) {
          if (positions[slot] >= 1) idx.offer(positions[slot], l2_norm(keys.row(slot)));
        }
        idx.offered_upto = std::max<std::size_t>(win_begin, 1);
        return;
      }
    }
    for (std::size_t p = idx.offered_upto; p < win_begin; ++p) {
      const std::size_t slot = evict ? cache.slot_of(p).value() : p;
      idx.offer(p, l2_norm(keys.row(slot)));
    }
    idx.offered_upto = std::max<std::size_t>(win_begin, idx.offered_upto);
  }

  void sparse(std::size_t layer, std::span<const float> q, const KVCache& cache, std::span<float> out) {
    const ModelSpec& spec = s_.model_.spec;
    const CondensateConfig& cfg = s_.cfg_;
    const std::size_t d = spec.head_dim;
    const std::size_t n = cache.length();
    const std::size_t win_begin = n > window ? n - window : 0;
    const auto positions = cache.positions();
    const bool evict = cache.retention() == Retention::kEvict;
    auto slot_of = [&](std::size_t pos) -> std::size_t {
      if (!evict) return pos;
      auto s = cache.slot_of(pos);
      require(s.has_value(), ErrorKind::kInvariantViolation,
              "decode: condensate position " + std::to_string(pos) + " not resident");
      return *s;
    };

    if (cfg.selector == Selector::kKeyNorm) {
      for (std::size_t kv = 0; kv < spec.n_kv_heads; ++kv) refresh_index(layer, kv, cache, win_begin);
    }
    LayerDiagnostics& ld = diag->layers[layer];
    ld.pillar = false;
    ld.set_size = 0;
    ld.ops = 0;
    if (s_.opts_.ulp_diagnostics) ld.ulp_exact = true;
    auto& sets = s_.sets_[layer];
    sets.resize(spec.n_heads);

    for (std::size_t h = 0; h < spec.n_heads; ++h) {
      const std::size_t kv = spec.kv_head_of(h);
      const RowsView keys = cache.keys(layer, kv);
      const RowsView values = cache.values(layer, kv);
      const auto qh = q.subspan(h * d, d);
      CondensateSet set;
      if (cfg.selector == Selector::kKeyNorm) {
        const std::vector<std::size_t> dynamic = s_.norm_index_[layer][kv].top();
        set = assemble_condensate(n, window, s_.persistent_.positions(), dynamic, cfg.budget_cap,
                                  [&](std::size_t pos) { return l2_norm(keys.row(slot_of(pos))); });
      } else {
        scores_.resize(keys.rows());
        attention_scores(qh, keys, scores_);
        const std::size_t slot_end = static_cast<std::size_t>(
            std::lower_bound(positions.begin(), positions.end(), win_begin) - positions.begin());
        std::vector<std::size_t> dynamic = topk_scores(scores_, slot_end, cfg.topk);
        for (std::size_t& s : dynamic) s = positions[s];
        set = assemble_condensate(n, window, s_.persistent_.positions(), dynamic, cfg.budget_cap,
                                  [&](std::size_t pos) { return scores_[slot_of(pos)]; });
      }
      slots_.clear();
      for (std::size_t pos : set.positions) slots_.push_back(slot_of(pos));
      subset_attend_into(qh, keys, values, slots_, out.subspan(h * d, d));
      if (s_.opts_.ulp_diagnostics) {
        const UlpReport rep = ulp_check(qh, keys, values, slots_);
        if (!rep.exact) ld.ulp_exact = false;
        diag->condensate_mass = std::min(diag->condensate_mass.value_or(1.0), rep.condensate_mass);
      }
      ld.set_size = std::max(ld.set_size, set.size());
      ld.ops += kOpsPerKeyDim * set.size() * d;
      sets[h] = std::move(set);
    }
  }

  DecodeSession& s_;
  DenseRouter dense_;
  AttentionRow row_;
  Vec32 scores_;
  std::vector<std::size_t> slots_;
};

// ---------------------------------------------------------------------------

DecodeSession::DecodeSession(const Model& model, CondensateConfig cfg, DecodeOptions opts)
    : model_(model),
      cfg_(std::move(cfg)),
      opts_(opts),
      fwd_(model),
      cache_(model.spec, opts.retention),
      norm_index_(model.spec.n_layers, std::vector<KeyNormIndex>(model.spec.n_kv_heads, KeyNormIndex(cfg_.topk))),
      sets_(model.spec.n_layers),
      router_(std::make_unique<Router>(*this)) {
  validate(cfg_, model.spec.n_layers);
  if (opts.retention == Retention::kEvict) {
    require(cfg_.window <= cfg_.w_max, ErrorKind::kInvalidArgument,
            "window: must not exceed w_max when evicting (" + std::to_string(cfg_.window) + " > " +
                std::to_string(cfg_.w_max) + ")");
  }
}

DecodeSession::~DecodeSession() = default;

const Vec32& DecodeSession::hidden() const { return fwd_.hidden(); }

const std::vector<CondensateSet>& DecodeSession::sets(std::size_t layer) const {
  require(layer < sets_.size(), ErrorKind::kInvalidArgument, "layer " + std::to_string(layer) + " out of range");
  return sets_[layer];
}

std::size_t DecodeSession::current_window() const {
  if (!cfg_.adaptive_window) return cfg_.window;
  return adaptive_window(rep_score(history_, cfg_.w_max), cfg_);
}

void DecodeSession::finish(StepDiagnostics& d) {
  d.length = cache_.length();
  d.resident = cache_.resident();
  d.persistent = persistent_.size();
  d.ops_dense = dense_step_ops(model_.spec, d.length);
  d.token = static_cast<TokenId>(argmax_det(logits_));
}

TokenId DecodeSession::prefill(std::span<const TokenId> prompt) {
  require(!prompt.empty(), ErrorKind::kEmptyInput, "prefill: empty prompt");
  require(history_.empty(), ErrorKind::kInvalidArgument, "prefill: session already holds a sequence");
  require(prompt.size() <= model_.spec.max_seq, ErrorKind::kSequenceOverflow,
          "prompt of " + std::to_string(prompt.size()) + " tokens exceeds max_seq " +
              std::to_string(model_.spec.max_seq));
  router_->prefill = true;
  router_->diag = nullptr;
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    history_.push_back(prompt[i]);
    const bool last = i + 1 == prompt.size();
    // The final prompt query feeds the spike tracker, so eviction right after
    // prefill keeps what the pillar layers already flag.
    router_->record_prefill_spikes = last;
    fwd_.step(prompt[i], cache_, *router_, last ? &logits_ : nullptr);
  }
  router_->record_prefill_spikes = false;
  StepDiagnostics d;
  d.prefill = true;
  d.position = prompt.size() - 1;
  d.window = current_window();
  d.layers.assign(model_.spec.n_layers, LayerDiagnostics{true, prompt.size(), std::nullopt, 0});
  for (LayerDiagnostics& l : d.layers) l.ops = prefill_ops(model_.spec, prompt.size()) / model_.spec.n_layers;
  d.ops = prefill_ops(model_.spec, prompt.size());
  if (cache_.retention() == Retention::kEvict) evict();
  finish(d);
  d.ops_dense = d.ops;
  diag_ = std::move(d);
  return diag_.token;
}

TokenId DecodeSession::step(TokenId prev) {
  require(!history_.empty(), ErrorKind::kInvalidArgument, "decode step before prefill");
  ++steps_;
  history_.push_back(prev);
  StepDiagnostics d;
  d.step = steps_;
  d.position = cache_.length();
  d.window = current_window();
  d.layers.assign(model_.spec.n_layers, LayerDiagnostics{});
  router_->prefill = false;
  router_->window = d.window;
  router_->diag = &d;
  fwd_.step(prev, cache_, *router_, &logits_);
  router_->diag = nullptr;
  index_stale_ = false;
  for (const LayerDiagnostics& l : d.layers) d.ops += l.ops;
  if (cache_.retention() == Retention::kEvict) evict();
  finish(d);
  diag_ = std::move(d);
  return diag_.token;
}

void DecodeSession::evict() {
  require(cache_.retention() == Retention::kEvict, ErrorKind::kInvalidArgument, "evict: cache is not in evict mode");
  const std::size_t n = cache_.length();
  if (n == 0) return;
  const std::size_t win_begin = n > cfg_.w_max ? n - cfg_.w_max : 0;
  std::vector<std::size_t> keep;
  keep.reserve(cache_.resident());
  for (std::size_t pos : cache_.positions()) {
    if (pos == 0 || pos >= win_begin || persistent_.contains(pos)) keep.push_back(pos);
  }
  const std::size_t want = 1 + (n - std::max<std::size_t>(win_begin, 1));
  std::size_t have = 0;
  for (std::size_t pos : keep) have += (pos == 0 || pos >= win_begin) ? 1 : 0;
  require(have == want, ErrorKind::kInvariantViolation, "evict: anchor or window position already evicted");
  for (std::size_t pos : persistent_.positions()) {
    require(std::binary_search(keep.begin(), keep.end(), pos), ErrorKind::kInvariantViolation,
            "evict: persistent position " + std::to_string(pos) + " already evicted");
  }
  if (keep.size() == cache_.resident()) return;
  cache_.retain(keep);
  index_stale_ = true;
}

GenerationResult generate(const Model& model, std::span<const TokenId> prompt, const CondensateConfig& cfg,
                          std::size_t max_tokens, const DecodeOptions& opts) {
  DecodeSession session(model, cfg, opts);
  GenerationResult r;
  TokenId tok = session.prefill(prompt);
  r.prefill = session.diagnostics();
  if (max_tokens == 0) return r;
  r.tokens.push_back(tok);
  while (r.tokens.size() < max_tokens && tok != model.spec.eos_token) {
    tok = session.step(tok);
    r.steps.push_back(session.diagnostics());
    r.ops_actual += r.steps.back().ops;
    r.ops_dense += r.steps.back().ops_dense;
    r.tokens.push_back(tok);
  }
  return r;
}

}  // namespace topo
