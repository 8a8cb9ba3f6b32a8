// Copyright 2026 The topo-attention Authors
// SPDX-License-Identifier: Apache-2.0

// Container layout:
//   8-byte magic "CNDNSATE" | u32 version (LE) | u64 header length (LE)
//   UTF-8 JSON header | raw little-endian f32 payload
// The header maps tensor name -> {dtype:"f32", shape:[...], offset, byte_len};
// offsets are relative to the first payload byte.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "topo/model.hpp"

namespace topo {

inline constexpr char kWeightMagic[8] = {'C', 'N', 'D', 'N', 'S', 'A', 'T', 'E'};
inline constexpr std::uint32_t kWeightVersion = 1;

struct TensorEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t byte_len = 0;
};

struct WeightHeader {
  std::uint32_t version = 0;
  ModelSpec spec;
  std::vector<TensorEntry> tensors;
  std::uint64_t payload_bytes = 0;  // bytes present after the header
};

void save_weights(const Model& model, const std::filesystem::path& path);
Model load_weights(const std::filesystem::path& path);

/// Parses and checks the header without reading tensor data.
WeightHeader read_weight_header(const std::filesystem::path& path);

}  // namespace topo
