// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "topo/cli.hpp"
#include "topo/weight_file.hpp"

using namespace topo;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "topo");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("topo_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_words(const std::string& s) {
  std::istringstream in(s);
  return static_cast<std::size_t>(std::distance(std::istream_iterator<std::string>(in), {}));
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"generate", "--max-tokens", "many"}).code == kExitUsage);
    CHECK(cli({"generate", "--mode", "sideways", "--out", scratch("mode").string()}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
  }

  TEST_CASE("missing weight file") {
    const Run r = cli({"generate", "--weights", "/nonexistent/w.bin"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("weights: not found: /nonexistent/w.bin") != std::string::npos);
  }

  TEST_CASE("generate writes identical artifacts across runs") {
    const fs::path a = scratch("gen_a"), b = scratch("gen_b");
    const std::vector<std::string> common{"generate", "--synth", "concentrated", "--kv-heads", "2", "--rope",
                                          "--prompt-len", "150", "--max-tokens", "12", "--ulp"};
    auto args_a = common, args_b = common;
    args_a.insert(args_a.end(), {"--out", a.string()});
    args_b.insert(args_b.end(), {"--out", b.string()});
    REQUIRE(cli(args_a).code == kExitOk);
    REQUIRE(cli(args_b).code == kExitOk);
    CHECK(slurp(a / "tokens.txt") == slurp(b / "tokens.txt"));
    CHECK(slurp(a / "trace.jsonl") == slurp(b / "trace.jsonl"));
    CHECK(count_words(slurp(a / "tokens.txt")) == 12);

    std::istringstream lines(slurp(a / "trace.jsonl"));
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("step"));
      CHECK(j.contains("token"));
      ++n;
    }
    CHECK(n >= 12);
    CHECK(nlohmann::json::parse(slurp(a / "meta.json"))["command"] == "generate");
  }

  TEST_CASE("dual mode on a concentrated model is identical") {
    const fs::path o = scratch("dual");
    const Run r = cli({"generate", "--synth", "concentrated", "--prompt-len", "200", "--max-tokens", "10", "--mode",
                       "dual", "--assert", "--out", o.string()});
    CHECK(r.code == kExitOk);
    CHECK(nlohmann::json::parse(slurp(o / "match.json"))["identical"] == true);
    CHECK(slurp(o / "tokens_sparse.txt") == slurp(o / "tokens_dense.txt"));
  }

  TEST_CASE("config file values are overridden by flags") {
    const fs::path dir = scratch("cfg");
    fs::create_directories(dir);
    const fs::path cfg = dir / "run.toml";
    std::ofstream(cfg) << "synth = \"concentrated\"\nout = \"" << (dir / "o").string()
                       << "\"\n[generate]\nprompt-len = 100\nmax-tokens = 3\n";
    REQUIRE(cli({"--config", cfg.string(), "generate"}).code == kExitOk);
    CHECK(count_words(slurp(dir / "o" / "tokens.txt")) == 3);
    REQUIRE(cli({"--config", cfg.string(), "generate", "--max-tokens", "5"}).code == kExitOk);
    CHECK(count_words(slurp(dir / "o" / "tokens.txt")) == 5);
    CHECK(cli({"--config", (dir / "missing.toml").string(), "generate"}).code == kExitUsage);
  }

  TEST_CASE("validate --assert exits 1 when the threshold is missed") {
    const fs::path o = scratch("val");
    const Run ok = cli({"validate", "--synth", "concentrated", "--prompts", "1", "--prompt-len", "200", "--steps",
                        "10", "--assert", "--out", o.string()});
    CHECK(ok.code == kExitOk);
    CHECK(nlohmann::json::parse(slurp(o / "equivalence.json"))["top1_match"] == 1.0);
    const Run bad = cli({"validate", "--synth", "random", "--kv-heads", "8", "--topk", "0", "--pillars", "none",
                         "--prompts", "2", "--prompt-len", "300", "--steps", "30", "--assert", "--out", o.string()});
    CHECK(bad.code == kExitFailed);
  }

  TEST_CASE("needle and mass subcommands") {
    const fs::path o = scratch("needle");
    const Run n = cli({"needle", "--n", "2048", "--mode", "both", "--assert", "--out", o.string()});
    CHECK(n.code == kExitOk);
    CHECK(fs::exists(o / "needle.json"));
    const Run m = cli({"mass", "--synth", "concentrated", "--topk", "0", "--n-list", "128,512", "--out", o.string()});
    CHECK(m.code == kExitOk);
    CHECK(fs::exists(o / "mass.json"));
  }

  TEST_CASE("convert-check reads headers and rejects garbage") {
    const fs::path dir = scratch("cc");
    fs::create_directories(dir);
    ModelSpec s = desk_spec(2, false);
    s.max_seq = 64;
    SynthRecipe rec;
    const Model m = synth_model(s, rec);
    save_weights(m, dir / "w.bin");
    const Run ok = cli({"convert-check", (dir / "w.bin").string(), "--load"});
    CHECK(ok.code == kExitOk);
    CHECK(ok.out.find("model hash") != std::string::npos);
    CHECK(ok.out.find("norm rmsnorm") != std::string::npos);
    std::ofstream(dir / "junk.bin") << "not a weight file at all";
    CHECK(cli({"convert-check", (dir / "junk.bin").string()}).code == kExitUsage);
    CHECK(cli({"convert-check"}).code == kExitUsage);

    const Run gen = cli({"generate", "--weights", (dir / "w.bin").string(), "--prompt-len", "20", "--max-tokens",
                         "4", "--pillars", "all", "--out", (dir / "o").string()});
    CHECK(gen.code == kExitOk);
  }
}
