// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "topo/bench.hpp"
#include "topo/decode.hpp"
#include "topo/lab.hpp"
#include "topo/weight_file.hpp"

namespace topo {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string weights;
  std::string synth = "concentrated";
  std::size_t kv_heads = 8;
  bool rope = false;
  std::uint64_t seed = 1;
  CondensateConfig cond;
  std::string pillars = "default";
  std::string selector = "keynorm";
  std::string out_dir = "out";
  bool assert_mode = false;
};

std::vector<std::size_t> parse_list(const std::string& text, const std::string& field) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError(field + ": not a list of integers: '" + text + "'");
    }
  }
  return out;
}

Model build_model(const RunConfig& rc) {
  if (!rc.weights.empty()) {
    if (!fs::exists(rc.weights)) throw UsageError("weights: not found: " + rc.weights);
    return load_weights(rc.weights);
  }
  SynthRecipe r;
  if (rc.synth == "random") {
    r.kind = SynthKind::kRandom;
  } else if (rc.synth == "concentrated") {
    r.kind = SynthKind::kConcentrated;
  } else {
    throw UsageError("synth: expected 'random' or 'concentrated', got '" + rc.synth + "'");
  }
  r.seed = rc.seed;
  return synth_model(desk_spec(rc.kv_heads, rc.rope), r);
}

CondensateConfig resolve_condensate(const RunConfig& rc, std::size_t n_layers) {
  CondensateConfig c = rc.cond;
  if (rc.pillars == "default") {
    c.pillar_layers = default_pillars(n_layers);
  } else if (rc.pillars == "all") {
    c.pillar_layers = dense_config(n_layers).pillar_layers;
  } else if (rc.pillars == "none") {
    c.pillar_layers.clear();
  } else {
    c.pillar_layers = parse_list(rc.pillars, "pillars");
  }
  if (rc.selector == "keynorm") {
    c.selector = Selector::kKeyNorm;
  } else if (rc.selector == "scores") {
    c.selector = Selector::kScores;
  } else {
    throw UsageError("selector: expected 'keynorm' or 'scores', got '" + rc.selector + "'");
  }
  validate(c, n_layers);
  return c;
}

std::vector<TokenId> read_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("prompt: not found: " + path);
  std::vector<TokenId> out;
  std::string word;
  while (in >> word) {
    try {
      std::size_t used = 0;
      const long v = std::stol(word, &used);
      if (used != word.size()) throw std::invalid_argument(word);
      out.push_back(static_cast<TokenId>(v));
    } catch (const std::exception&) {
      throw UsageError("prompt: '" + word + "' is not a token id");
    }
  }
  if (out.empty()) throw UsageError("prompt: file holds no tokens");
  return out;
}

std::string tokens_text(const std::vector<TokenId>& t) {
  std::string s;
  for (std::size_t i = 0; i < t.size(); ++i) s += (i ? " " : "") + std::to_string(t[i]);
  return s + "\n";
}

class Output {
 public:
  explicit Output(const std::string& dir) : dir_(dir) { fs::create_directories(dir_); }
  void write(const std::string& name, const std::string& text) const {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw Error(ErrorKind::kIo, "cannot write " + (dir_ / name).string());
    f << text;
  }
  fs::path path(const std::string& name) const { return dir_ / name; }

 private:
  fs::path dir_;
};

// Timestamps live apart from the results so the result files stay byte-identical across runs.
void write_meta(const Output& o, const std::string& command, int argc, const char* const* argv) {
  nlohmann::ordered_json j;
  j["command"] = command;
  std::vector<std::string> args(argv, argv + argc);
  j["argv"] = args;
  j["unix_time"] = static_cast<long long>(std::time(nullptr));
  o.write("meta.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string prompt_file;
  std::size_t prompt_len = 256;
  std::size_t max_tokens = 64;
  std::string mode = "sparse";
  bool evict = false;
  bool ulp = false;
};

int cmd_generate(const RunConfig& rc, const GenerateArgs& a, std::ostream& out) {
  const Model model = build_model(rc);
  const CondensateConfig cfg = resolve_condensate(rc, model.spec.n_layers);
  const std::vector<TokenId> prompt =
      a.prompt_file.empty() ? filler_prompt(model.spec, a.prompt_len, rc.seed) : read_tokens(a.prompt_file);
  DecodeOptions opts;
  opts.retention = a.evict ? Retention::kEvict : Retention::kFull;
  opts.ulp_diagnostics = a.ulp;
  const Output o(rc.out_dir);

  auto run = [&](const CondensateConfig& c, const std::string& suffix) {
    GenerationResult r = generate(model, prompt, c, a.max_tokens, opts);
    o.write("tokens" + suffix + ".txt", tokens_text(r.tokens));
    o.write("trace" + suffix + ".jsonl", to_jsonl(r));
    out << "tokens" << suffix << ": " << r.tokens.size() << " generated, ops " << r.ops_actual << " vs dense "
        << r.ops_dense << "\n";
    return r;
  };
  if (a.mode == "sparse") {
    run(cfg, "");
  } else if (a.mode == "dense") {
    run(dense_config(model.spec.n_layers), "");
  } else if (a.mode == "dual") {
    const GenerationResult s = run(cfg, "_sparse");
    const GenerationResult d = run(dense_config(model.spec.n_layers), "_dense");
    std::size_t same = 0;
    std::optional<std::size_t> diverge;
    for (std::size_t i = 0; i < std::max(s.tokens.size(), d.tokens.size()); ++i) {
      const bool eq = i < s.tokens.size() && i < d.tokens.size() && s.tokens[i] == d.tokens[i];
      if (eq && !diverge) ++same;
      if (!eq && !diverge) diverge = i;
    }
    nlohmann::ordered_json j;
    j["sparse_tokens"] = s.tokens.size();
    j["dense_tokens"] = d.tokens.size();
    j["matching_prefix"] = same;
    j["identical"] = !diverge.has_value();
    j["first_divergence"] = diverge ? nlohmann::ordered_json(*diverge) : nullptr;
    o.write("match.json", j.dump(2) + "\n");
    out << "match: " << (diverge ? "diverged at token " + std::to_string(*diverge) : std::string("identical")) << "\n";
    if (rc.assert_mode && diverge) return kExitFailed;
  } else {
    throw UsageError("mode: expected sparse, dense or dual, got '" + a.mode + "'");
  }
  return kExitOk;
}

struct ValidateArgs {
  std::size_t prompts = 3;
  std::size_t prompt_len = 512;
  std::size_t steps = 100;
  bool evict = false;
  double min_top1 = 1.0;
};

int cmd_validate(const RunConfig& rc, const ValidateArgs& a, std::ostream& out) {
  const Model model = build_model(rc);
  const CondensateConfig cfg = resolve_condensate(rc, model.spec.n_layers);
  std::vector<std::vector<TokenId>> prompts;
  for (std::size_t i = 0; i < a.prompts; ++i) prompts.push_back(filler_prompt(model.spec, a.prompt_len, rc.seed + i));
  EquivalenceOptions eo;
  eo.steps_per_prompt = a.steps;
  eo.retention = a.evict ? Retention::kEvict : Retention::kFull;
  const EquivalenceReport r = run_equivalence(model, prompts, cfg, eo);
  Output(rc.out_dir).write("equivalence.json", to_json(r) + "\n");
  out << to_table(r);
  if (!r.oracle_feasible) return kExitFailed;
  if (rc.assert_mode && r.top1_match < a.min_top1) return kExitFailed;
  return kExitOk;
}

struct BenchArgs {
  std::string n_list = "1024,2048,4096,8192,16384,32768,65536,131072,262144";
  std::size_t repeats = 21;
  std::size_t warmup = 3;
  std::size_t dense_max = 16384;
  std::size_t heads = 8;
  std::size_t kv_heads = 1;
  std::size_t head_dim = 64;
  std::size_t project = 0;
};

int cmd_bench(const RunConfig& rc, const BenchArgs& a, std::ostream& out, std::ostream& err) {
  BenchConfig bc;
  bc.n_list = parse_list(a.n_list, "n_list");
  bc.repeats = a.repeats;
  bc.warmup = a.warmup;
  bc.dense_max_n = a.dense_max;
  bc.n_heads = a.heads;
  bc.n_kv_heads = a.kv_heads;
  bc.head_dim = a.head_dim;
  bc.seed = rc.seed;
  bc.condensate = resolve_condensate(rc, 1);
  std::vector<BenchRecord> recs = run_scaling(bc);
  if (a.project > 0) recs.push_back(project_row(recs, a.project, bc));
  const Output o(rc.out_dir);
  o.write("bench.csv", to_csv(recs));
  out << to_table(recs);

  std::vector<double> n, od, os;
  for (const BenchRecord& r : recs) {
    if (r.projected) continue;
    n.push_back(static_cast<double>(r.n));
    od.push_back(static_cast<double>(r.ops_dense));
    os.push_back(static_cast<double>(r.ops_sparse));
  }
  ScalingFit fit;
  try {
    fit = fit_slopes(recs);
  } catch (const Error& e) {
    err << "bench: " << e.what() << "\n";
    return kExitUsage;
  }
  const LogLogFit ops_dense = fit_loglog(n, od), ops_sparse = fit_loglog(n, os);
  nlohmann::ordered_json j;
  j["slope_dense"] = fit.dense.slope;
  j["r2_dense"] = fit.dense.r2;
  j["slope_sparse"] = fit.sparse.slope;
  j["r2_sparse"] = fit.sparse.r2;
  j["ops_slope_dense"] = ops_dense.slope;
  j["ops_slope_sparse"] = ops_sparse.slope;
  o.write("bench_fit.json", j.dump(2) + "\n");
  char buf[200];
  std::snprintf(buf, sizeof buf, "wall-clock slope: dense %.3f (r2 %.3f), sparse %.3f (r2 %.3f)\n", fit.dense.slope,
                fit.dense.r2, fit.sparse.slope, fit.sparse.r2);
  out << buf;
  std::snprintf(buf, sizeof buf, "op-count slope:   dense %.3f, sparse %.3f\n", ops_dense.slope, ops_sparse.slope);
  out << buf;
  if (rc.assert_mode && (std::abs(ops_sparse.slope) >= 0.05 || std::abs(ops_dense.slope - 1.0) > 0.02)) {
    return kExitFailed;
  }
  return kExitOk;
}

struct NeedleArgs {
  std::size_t n = 8192;
  std::size_t needles = 4;
  std::string mode = "both";
  bool model_mode = false;
};

int cmd_needle(const RunConfig& rc, const NeedleArgs& a, std::ostream& out) {
  const bool want_static = a.mode == "static" || a.mode == "both";
  const bool want_dynamic = a.mode == "dynamic" || a.mode == "both";
  if (!want_static && !want_dynamic) throw UsageError("mode: expected static, dynamic or both, got '" + a.mode + "'");
  std::optional<Model> model;
  std::size_t layers = 1;
  if (a.model_mode) {
    model = build_model(rc);
    layers = model->spec.n_layers;
  }
  const CondensateConfig dyn = resolve_condensate(rc, layers);
  CondensateConfig stat = dyn;
  stat.topk = 0;
  auto run = [&](const CondensateConfig& c) {
    if (model) return run_needle_model(*model, a.n, a.needles, c, rc.seed);
    NeedleCacheSpec s;
    s.n = a.n;
    s.needles = a.needles;
    s.seed = rc.seed;
    return run_needle_cache(s, c);
  };
  nlohmann::ordered_json j;
  std::optional<NeedleReport> rs, rd;
  if (want_static) {
    rs = run(stat);
    j["static"] = nlohmann::ordered_json::parse(to_json(*rs));
    out << "static (k=0)\n" << to_table(*rs);
  }
  if (want_dynamic) {
    rd = run(dyn);
    j["dynamic"] = nlohmann::ordered_json::parse(to_json(*rd));
    out << "dynamic (k=" << dyn.topk << ")\n" << to_table(*rd);
  }
  bool subset = true;
  if (rs && rd) {
    for (std::size_t i = 0; i < rs->needles.size(); ++i) subset = subset && (!rs->needles[i].found || rd->needles[i].found);
    j["static_subset_of_dynamic"] = subset;
    out << "found(static) subset of found(dynamic): " << (subset ? "yes" : "no") << "\n";
  }
  Output(rc.out_dir).write("needle.json", j.dump(2) + "\n");
  if (rc.assert_mode && (!subset || (rd && rd->found() != rd->needles.size()))) return kExitFailed;
  return kExitOk;
}

struct MassArgs {
  std::string n_list = "128,512,2048";
  long layer = -1;
};

int cmd_mass(const RunConfig& rc, const MassArgs& a, std::ostream& out) {
  const Model model = build_model(rc);
  const CondensateConfig cfg = resolve_condensate(rc, model.spec.n_layers);
  const std::size_t layer = a.layer < 0 ? model.spec.n_layers / 2 : static_cast<std::size_t>(a.layer);
  auto j = nlohmann::ordered_json::array();
  bool increasing = true;
  double prev = -1.0;
  for (std::size_t n : parse_list(a.n_list, "n_list")) {
    if (n == 0) throw UsageError("n_list: lengths must be positive");
    const auto prompt = filler_prompt(model.spec, n, rc.seed);
    const MassCensus mc = mass_census(model, prompt, layer, n - 1, cfg);
    out << to_table(mc) << "\n";
    j.push_back(nlohmann::ordered_json::parse(to_json(mc)));
    increasing = increasing && mc.mean.condensate() > prev;
    prev = mc.mean.condensate();
  }
  Output(rc.out_dir).write("mass.json", j.dump(2) + "\n");
  if (rc.assert_mode && !increasing) return kExitFailed;
  return kExitOk;
}

struct ConvertCheckArgs {
  std::string path;
  bool load = false;
};

int cmd_convert_check(const ConvertCheckArgs& a, std::ostream& out) {
  if (!fs::exists(a.path)) throw UsageError("weights: not found: " + a.path);
  const WeightHeader h = read_weight_header(a.path);
  const ModelSpec& s = h.spec;
  out << "format version " << h.version << ", " << h.tensors.size() << " tensors, " << h.payload_bytes
      << " payload bytes\n";
  out << "layers " << s.n_layers << ", heads " << s.n_heads << "/" << s.n_kv_heads << ", head_dim " << s.head_dim
      << ", model_dim " << s.model_dim << ", mlp_dim " << s.mlp_dim << ", vocab " << s.vocab_size << ", norm "
      << (s.norm == NormKind::kLayer ? "layernorm" : "rmsnorm") << ", rope " << (s.rope_enabled ? "on" : "off")
      << "\n";
  if (a.load) {
    const Model m = load_weights(a.path);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(model_hash(m)));
    out << "loaded, model hash " << buf << "\n";
  }
  out << "ok\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse condensate attention engine with a dense oracle"};
  app.set_config("--config", "", "TOML config; command-line flags override it");
  app.fallthrough();
  app.require_subcommand(1);

  RunConfig rc;
  app.add_option("--weights", rc.weights, "Weight file (default: synthetic model)");
  app.add_option("--synth", rc.synth, "Synthetic model kind: concentrated | random");
  app.add_option("--kv-heads", rc.kv_heads, "Synthetic model kv heads (8 = MHA, 2, 1)");
  app.add_flag("--rope", rc.rope, "Synthetic model uses RoPE");
  app.add_option("--seed", rc.seed, "Seed for synthetic weights, prompts and caches");
  app.add_option("--window", rc.cond.window, "Local window W");
  app.add_option("--topk", rc.cond.topk, "Dynamic top-k");
  app.add_option("--k-spike", rc.cond.k_spike, "Spike positions recorded per pillar head");
  app.add_option("--tau", rc.cond.persist_threshold, "Spike count that makes a position persistent");
  app.add_option("--w-min", rc.cond.w_min, "Adaptive window minimum");
  app.add_option("--w-max", rc.cond.w_max, "Adaptive window maximum and eviction window");
  app.add_option("--budget", rc.cond.budget_cap, "Budget cap B_max");
  app.add_flag("--adaptive-window", rc.cond.adaptive_window, "Window from repetition score");
  app.add_option("--pillars", rc.pillars, "Dense layers: default | all | none | comma list");
  app.add_option("--selector", rc.selector, "Sparse top-k selector: keynorm | scores");
  app.add_option("--out", rc.out_dir, "Output directory");
  app.add_flag("--assert", rc.assert_mode, "Exit 1 when the experiment misses its criterion");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Greedy generation with a JSON-lines trace");
  gen->add_option("--prompt", ga.prompt_file, "Whitespace-separated token ids");
  gen->add_option("--prompt-len", ga.prompt_len, "Filler prompt length when no --prompt");
  gen->add_option("--max-tokens", ga.max_tokens, "Tokens to generate");
  gen->add_option("--mode", ga.mode, "sparse | dense | dual");
  gen->add_flag("--evict", ga.evict, "Drop cache entries outside anchor, w_max window and persistent set");
  gen->add_flag("--ulp", ga.ulp, "Per-step ULP exactness diagnostics");

  ValidateArgs va;
  auto* val = app.add_subcommand("validate", "Lockstep comparison against the dense oracle");
  val->add_option("--prompts", va.prompts, "Number of filler prompts");
  val->add_option("--prompt-len", va.prompt_len, "Prompt length");
  val->add_option("--steps", va.steps, "Decode steps per prompt");
  val->add_flag("--evict", va.evict, "Evict in the sparse engine");
  val->add_option("--min-top1", va.min_top1, "Top-1 agreement required under --assert");

  BenchArgs ba;
  auto* ben = app.add_subcommand("bench", "Per-step attention scaling on synthetic caches");
  ben->add_option("--n-list", ba.n_list, "Comma-separated ascending N values");
  ben->add_option("--repeats", ba.repeats, "Timed repeats per N (>= 20)");
  ben->add_option("--warmup", ba.warmup, "Untimed warmup runs");
  ben->add_option("--dense-max", ba.dense_max, "Largest N timed densely");
  ben->add_option("--heads", ba.heads, "Query heads");
  ben->add_option("--bench-kv-heads", ba.kv_heads, "KV heads");
  ben->add_option("--head-dim", ba.head_dim, "Head dimension");
  ben->add_option("--project", ba.project, "Add a PROJECTED dense row at this N");

  NeedleArgs na;
  auto* nee = app.add_subcommand("needle", "Needle retrieval, static vs dynamic selection");
  nee->add_option("--n", na.n, "Sequence length");
  nee->add_option("--needles", na.needles, "Planted needles (<= 8)");
  nee->add_option("--mode", na.mode, "static | dynamic | both");
  nee->add_flag("--model-mode", na.model_mode, "Plant facts in a prompt and decode (default: synthetic cache)");

  MassArgs ma;
  auto* mas = app.add_subcommand("mass", "Attention mass by region at the last position");
  mas->add_option("--n-list", ma.n_list, "Prompt lengths");
  mas->add_option("--layer", ma.layer, "Layer (default L/2)");

  ConvertCheckArgs ca;
  auto* cc = app.add_subcommand("convert-check", "Check a weight file header");
  cc->add_option("path", ca.path, "Weight file")->required();
  cc->add_flag("--load", ca.load, "Also load every tensor");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) {
      const int rcode = cmd_generate(rc, ga, out);
      write_meta(Output(rc.out_dir), "generate", argc, argv);
      return rcode;
    }
    if (*val) {
      const int rcode = cmd_validate(rc, va, out);
      write_meta(Output(rc.out_dir), "validate", argc, argv);
      return rcode;
    }
    if (*ben) {
      const int rcode = cmd_bench(rc, ba, out, err);
      write_meta(Output(rc.out_dir), "bench", argc, argv);
      return rcode;
    }
    if (*nee) {
      const int rcode = cmd_needle(rc, na, out);
      write_meta(Output(rc.out_dir), "needle", argc, argv);
      return rcode;
    }
    if (*mas) {
      const int rcode = cmd_mass(rc, ma, out);
      write_meta(Output(rc.out_dir), "mass", argc, argv);
      return rcode;
    }
    if (*cc) return cmd_convert_check(ca, out);
  } catch (const UsageError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << to_string(e.kind()) << ": " << e.what() << "\n";
    const bool experiment = e.kind() == ErrorKind::kInvariantViolation || e.kind() == ErrorKind::kOracleInfeasible;
    return experiment ? kExitFailed : kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace topo
