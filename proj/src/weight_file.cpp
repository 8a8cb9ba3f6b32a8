// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

#include "topo/weight_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

namespace topo {
namespace {

static_assert(std::endian::native == std::endian::little, "weight files are little-endian");

using ordered_json = nlohmann::ordered_json;

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  const std::vector<float>* data;
};

std::vector<NamedTensor> collect(const Model& m) {
  std::vector<NamedTensor> out;
  auto mat = [&](const std::string& name, const Mat32& t) {
    if (!t.empty()) out.push_back({name, {t.rows(), t.cols()}, &t.data()});
  };
  auto vec = [&](const std::string& name, const Vec32& v) {
    if (!v.empty()) out.push_back({name, {v.size()}, &v});
  };
  mat("tok_embedding", m.embedding);
  mat("pos_embedding", m.pos_embedding);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const LayerWeights& w = m.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    vec(p + "norm1", w.norm1);
    vec(p + "norm1_bias", w.norm1_bias);
    mat(p + "w_q", w.w_q);
    vec(p + "b_q", w.b_q);
    mat(p + "w_k", w.w_k);
    vec(p + "b_k", w.b_k);
    mat(p + "w_v", w.w_v);
    vec(p + "b_v", w.b_v);
    mat(p + "w_o", w.w_o);
    vec(p + "b_o", w.b_o);
    vec(p + "norm2", w.norm2);
    vec(p + "norm2_bias", w.norm2_bias);
    mat(p + "mlp_in", w.mlp_in);
    vec(p + "b_mlp_in", w.b_mlp_in);
    mat(p + "mlp_out", w.mlp_out);
    vec(p + "b_mlp_out", w.b_mlp_out);
  }
  vec("final_norm", m.final_norm);
  vec("final_norm_bias", m.final_norm_bias);
  mat("lm_head", m.lm_head);
  return out;
}

ordered_json spec_to_json(const ModelSpec& s) {
  return ordered_json{{"n_layers", s.n_layers},   {"n_heads", s.n_heads},       {"n_kv_heads", s.n_kv_heads},
                      {"head_dim", s.head_dim},   {"model_dim", s.model_dim},   {"mlp_dim", s.mlp_dim},
                      {"vocab_size", s.vocab_size}, {"max_seq", s.max_seq},     {"rope", s.rope_enabled},
                      {"rope_theta", s.rope_theta}, {"bos_token", s.bos_token}, {"eos_token", s.eos_token},
                      {"norm_eps", s.norm_eps}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.n_layers = j.at("n_layers").get<std::size_t>();
  s.n_heads = j.at("n_heads").get<std::size_t>();
  s.n_kv_heads = j.at("n_kv_heads").get<std::size_t>();
  s.head_dim = j.at("head_dim").get<std::size_t>();
  s.model_dim = j.at("model_dim").get<std::size_t>();
  s.mlp_dim = j.at("mlp_dim").get<std::size_t>();
  s.vocab_size = j.at("vocab_size").get<std::size_t>();
  s.max_seq = j.at("max_seq").get<std::size_t>();
  s.rope_enabled = j.at("rope").get<bool>();
  s.rope_theta = j.at("rope_theta").get<float>();
  s.bos_token = j.value("bos_token", TokenId{0});
  s.eos_token = j.at("eos_token").get<TokenId>();
  s.norm_eps = j.value("norm_eps", 1e-5f);
  return s;
}

std::size_t element_count(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

struct ParsedFile {
  WeightHeader header;
  std::uint64_t payload_start = 0;
};

ParsedFile parse_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[8];
  in.read(magic, sizeof magic);
  require(in.gcount() == sizeof magic && std::memcmp(magic, kWeightMagic, sizeof magic) == 0,
          ErrorKind::kMalformedHeader, path.string() + ": bad magic");
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  require(static_cast<bool>(in), ErrorKind::kMalformedHeader, path.string() + ": short preamble");
  require(version == kWeightVersion, ErrorKind::kMalformedHeader,
          path.string() + ": unsupported version " + std::to_string(version));

  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t preamble = sizeof magic + sizeof version + sizeof header_len;
  require(header_len <= file_size - preamble, ErrorKind::kMalformedHeader,
          path.string() + ": header length exceeds file size");
  in.seekg(static_cast<std::streamoff>(preamble));
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));

  ParsedFile out;
  out.payload_start = preamble + header_len;
  out.header.version = version;
  out.header.payload_bytes = file_size - out.payload_start;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    require(j.value("norm", std::string("rmsnorm")) == "rmsnorm" || j.value("norm", std::string()) == "layernorm",
            ErrorKind::kMalformedHeader, path.string() + ": unknown norm kind");
    out.header.spec = spec_from_json(j.at("spec"));
    out.header.spec.norm = j.value("norm", std::string("rmsnorm")) == "layernorm" ? NormKind::kLayer : NormKind::kRms;
    for (const auto& [name, t] : j.at("tensors").items()) {
      require(t.at("dtype").get<std::string>() == "f32", ErrorKind::kMalformedHeader,
              path.string() + ": tensor " + name + " has unsupported dtype");
      TensorEntry e;
      e.name = name;
      e.shape = t.at("shape").get<std::vector<std::size_t>>();
      e.offset = t.at("offset").get<std::uint64_t>();
      e.byte_len = t.at("byte_len").get<std::uint64_t>();
      require(e.byte_len == element_count(e.shape) * sizeof(float), ErrorKind::kMalformedHeader,
              path.string() + ": tensor " + name + " byte_len disagrees with shape");
      out.header.tensors.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kMalformedHeader, path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace

void save_weights(const Model& model, const std::filesystem::path& path) {
  validate(model);
  const auto tensors = collect(model);
  ordered_json header;
  header["format"] = "topo-weights";
  header["norm"] = model.spec.norm == NormKind::kLayer ? "layernorm" : "rmsnorm";
  header["spec"] = spec_to_json(model.spec);
  ordered_json entries = ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    const std::uint64_t bytes = t.data->size() * sizeof(float);
    entries[t.name] = {{"dtype", "f32"}, {"shape", t.shape}, {"offset", offset}, {"byte_len", bytes}};
    offset += bytes;
  }
  header["tensors"] = entries;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, path.string() + ": cannot open for writing");
  const std::uint32_t version = kWeightVersion;
  const std::uint64_t header_len = text.size();
  out.write(kWeightMagic, sizeof kWeightMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors) {
    out.write(reinterpret_cast<const char*>(t.data->data()), static_cast<std::streamsize>(t.data->size() * sizeof(float)));
  }
  require(static_cast<bool>(out), ErrorKind::kIo, path.string() + ": write failed");
}

WeightHeader read_weight_header(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::kNotFound, path.string());
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, path.string() + ": cannot open");
  return parse_header(in, path).header;
}

Model load_weights(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), ErrorKind::kNotFound, path.string());
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, path.string() + ": cannot open");
  const ParsedFile parsed = parse_header(in, path);
  const WeightHeader& h = parsed.header;
  validate(h.spec);

  std::map<std::string, const TensorEntry*> by_name;
  for (const auto& e : h.tensors) by_name[e.name] = &e;

  auto read = [&](const std::string& name, bool optional, const std::vector<std::size_t>& expect) -> std::vector<float> {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (optional) return {};
      fail(ErrorKind::kNotFound, path.string() + ": missing tensor " + name);
    }
    const TensorEntry& e = *it->second;
    require(e.shape == expect, ErrorKind::kShapeMismatch, path.string() + ": tensor " + name + " has unexpected shape");
    require(e.offset + e.byte_len <= h.payload_bytes, ErrorKind::kTruncated,
            path.string() + ": tensor " + name + " extends past end of file");
    std::vector<float> data(element_count(e.shape));
    in.seekg(static_cast<std::streamoff>(parsed.payload_start + e.offset));
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(e.byte_len));
    require(static_cast<std::uint64_t>(in.gcount()) == e.byte_len, ErrorKind::kTruncated,
            path.string() + ": tensor " + name + " is truncated");
    return data;
  };
  auto mat = [&](const std::string& name, std::size_t r, std::size_t c, bool optional = false) {
    auto data = read(name, optional, {r, c});
    return data.empty() ? Mat32() : Mat32(r, c, std::move(data));
  };
  auto vec = [&](const std::string& name, std::size_t n, bool optional = false) { return read(name, optional, {n}); };

  const ModelSpec& s = h.spec;
  Model m;
  m.spec = s;
  m.embedding = mat("tok_embedding", s.vocab_size, s.model_dim);
  m.pos_embedding = mat("pos_embedding", s.max_seq, s.model_dim, true);
  m.layers.resize(s.n_layers);
  for (std::size_t l = 0; l < s.n_layers; ++l) {
    LayerWeights& w = m.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    w.norm1 = vec(p + "norm1", s.model_dim);
    w.norm1_bias = vec(p + "norm1_bias", s.model_dim, true);
    w.w_q = mat(p + "w_q", s.q_dim(), s.model_dim);
    w.b_q = vec(p + "b_q", s.q_dim(), true);
    w.w_k = mat(p + "w_k", s.kv_dim(), s.model_dim);
    w.b_k = vec(p + "b_k", s.kv_dim(), true);
    w.w_v = mat(p + "w_v", s.kv_dim(), s.model_dim);
    w.b_v = vec(p + "b_v", s.kv_dim(), true);
    w.w_o = mat(p + "w_o", s.model_dim, s.q_dim());
    w.b_o = vec(p + "b_o", s.model_dim, true);
    w.norm2 = vec(p + "norm2", s.model_dim);
    w.norm2_bias = vec(p + "norm2_bias", s.model_dim, true);
    w.mlp_in = mat(p + "mlp_in", s.mlp_dim, s.model_dim);
    w.b_mlp_in = vec(p + "b_mlp_in", s.mlp_dim, true);
    w.mlp_out = mat(p + "mlp_out", s.model_dim, s.mlp_dim);
    w.b_mlp_out = vec(p + "b_mlp_out", s.model_dim, true);
  }
  m.final_norm = vec("final_norm", s.model_dim);
  m.final_norm_bias = vec("final_norm_bias", s.model_dim, true);
  // Tied heads (GPT-2) may omit lm_head; the embedding doubles as the output projection.
  m.lm_head = by_name.count("lm_head") ? mat("lm_head", s.vocab_size, s.model_dim) : m.embedding;
  validate(m);
  return m;
}

}  // namespace topo
