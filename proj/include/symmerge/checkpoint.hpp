// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints are a safetensors tensor file plus a `config.json` sidecar in
// the same directory. A checkpoint path may name either the directory or the
// `.safetensors` file itself.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "symmerge/model.hpp"

namespace symmerge {

enum class DType { kF64, kF32, kBF16 };

std::string dtype_name(DType dtype);
DType parse_dtype(const std::string& name);

namespace safetensors {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;  // up-cast to 64-bit on read
};

struct Container {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> tensors;  // file order

  const Tensor* find(const std::string& name) const;
};

// Throws LoadError on malformed headers, unknown dtypes or truncated payloads.
Container read(const std::filesystem::path& path);
Container parse(std::string_view bytes, const std::string& origin);

std::string serialize(const Container& container, DType dtype);
void write(const std::filesystem::path& path, const Container& container, DType dtype);

}  // namespace safetensors

struct CheckpointPaths {
  std::filesystem::path tensors;
  std::filesystem::path config;
};

inline constexpr const char* kTensorFileName = "model.safetensors";
inline constexpr const char* kConfigFileName = "config.json";

CheckpointPaths checkpoint_paths(const std::filesystem::path& path);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);
ModelConfig load_config(const std::filesystem::path& path);

// Tensors of `w` in canonical order, ready to serialize.
safetensors::Container to_container(const ModelWeights& w);
// Inverse of to_container; validates names and shapes against `config`.
ModelWeights from_container(const safetensors::Container& c, const ModelConfig& config,
                            const std::string& origin);

ModelWeights load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const ModelWeights& w, const std::filesystem::path& path,
                     DType dtype = DType::kF32);

// Writes to a temporary sibling and renames over `path`. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace symmerge
