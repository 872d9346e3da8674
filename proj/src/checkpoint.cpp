// SPDX-License-Identifier: Apache-2.0
#include "symmerge/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>

#include "symmerge/error.hpp"

namespace symmerge {

static_assert(std::endian::native == std::endian::little,
              "safetensors payloads are little-endian; big-endian hosts are not supported");

namespace fs = std::filesystem;
using nlohmann::json;

std::string dtype_name(DType dtype) {
  switch (dtype) {
    case DType::kF64: return "F64";
    case DType::kF32: return "F32";
    case DType::kBF16: return "BF16";
  }
  return "?";
}

DType parse_dtype(const std::string& name) {
  if (name == "F64") return DType::kF64;
  if (name == "F32") return DType::kF32;
  if (name == "BF16") return DType::kBF16;
  throw LoadError("unknown dtype '" + name + "' (accepted: F64, F32, BF16)");
}

namespace {

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF64: return 8;
    case DType::kF32: return 4;
    case DType::kBF16: return 2;
  }
  return 0;
}

std::uint16_t to_bf16(float f) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
  if ((bits & 0x7f800000u) == 0x7f800000u && (bits & 0x007fffffu) != 0) {
    return static_cast<std::uint16_t>((bits >> 16) | 0x40u);  // keep NaN quiet
  }
  const std::uint32_t rounding = 0x7fffu + ((bits >> 16) & 1u);
  return static_cast<std::uint16_t>((bits + rounding) >> 16);
}

double from_bf16(std::uint16_t v) {
  return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(v) << 16));
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace

namespace safetensors {

const Tensor* Container::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

Container parse(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < 8) throw LoadError(origin + ": file too short for a safetensors header");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) {
    throw LoadError(origin + ": header length " + std::to_string(header_len) +
                    " exceeds file size");
  }
  json header;
  try {
    header = json::parse(bytes.substr(8, header_len));
  } catch (const json::exception& e) {
    throw LoadError(origin + ": malformed JSON header: " + e.what());
  }
  if (!header.is_object()) throw LoadError(origin + ": header is not a JSON object");

  const std::string_view payload = bytes.substr(8 + header_len);
  Container out;
  std::vector<std::pair<std::uint64_t, std::string>> order;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      if (!entry.is_object()) throw LoadError(origin + ": __metadata__ must be an object");
      for (const auto& [k, v] : entry.items()) {
        if (!v.is_string()) throw LoadError(origin + ": metadata value for '" + k + "' is not a string");
        out.metadata[k] = v.get<std::string>();
      }
      continue;
    }
    try {
      const DType dtype = parse_dtype(entry.at("dtype").get<std::string>());
      Tensor t;
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2 || offsets[0] > offsets[1] || offsets[1] > payload.size()) {
        throw LoadError("bad data_offsets");
      }
      std::size_t count = 1;
      for (std::size_t d : t.shape) count *= d;
      if (offsets[1] - offsets[0] != count * dtype_size(dtype)) {
        throw LoadError("payload size " + std::to_string(offsets[1] - offsets[0]) +
                        " does not match shape " + shape_text(t.shape) + " of " +
                        dtype_name(dtype));
      }
      t.values.resize(count);
      const char* src = payload.data() + offsets[0];
      for (std::size_t i = 0; i < count; ++i) {
        switch (dtype) {
          case DType::kF64: {
            double v;
            std::memcpy(&v, src + 8 * i, 8);
            t.values[i] = v;
            break;
          }
          case DType::kF32: {
            float v;
            std::memcpy(&v, src + 4 * i, 4);
            t.values[i] = static_cast<double>(v);
            break;
          }
          case DType::kBF16: {
            std::uint16_t v;
            std::memcpy(&v, src + 2 * i, 2);
            t.values[i] = from_bf16(v);
            break;
          }
        }
      }
      order.emplace_back(offsets[0], name);
      out.tensors.emplace_back(name, std::move(t));
    } catch (const LoadError& e) {
      throw LoadError(origin + ": tensor '" + name + "': " + e.what());
    } catch (const json::exception& e) {
      throw LoadError(origin + ": tensor '" + name + "': malformed entry: " + e.what());
    }
  }
  // Present tensors in payload order rather than the header's key order.
  std::vector<std::pair<std::string, Tensor>> sorted;
  std::stable_sort(order.begin(), order.end());
  for (const auto& [offset, name] : order) {
    for (auto& entry : out.tensors) {
      if (entry.first == name) {
        sorted.push_back(std::move(entry));
        break;
      }
    }
  }
  out.tensors = std::move(sorted);
  return out;
}

Container read(const fs::path& path) {
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw LoadError(e.what());
  }
  return parse(bytes, path.string());
}

std::string serialize(const Container& container, DType dtype) {
  json header = json::object();
  if (!container.metadata.empty()) header["__metadata__"] = container.metadata;
  std::string payload;
  for (const auto& [name, t] : container.tensors) {
    const std::size_t begin = payload.size();
    for (double v : t.values) {
      switch (dtype) {
        case DType::kF64: payload.append(reinterpret_cast<const char*>(&v), 8); break;
        case DType::kF32: {
          const float f = static_cast<float>(v);
          payload.append(reinterpret_cast<const char*>(&f), 4);
          break;
        }
        case DType::kBF16: {
          const std::uint16_t b = to_bf16(static_cast<float>(v));
          payload.append(reinterpret_cast<const char*>(&b), 2);
          break;
        }
      }
    }
    header[name] = {{"dtype", dtype_name(dtype)},
                    {"shape", t.shape},
                    {"data_offsets", {begin, payload.size()}}};
  }
  std::string text = header.dump();
  while ((8 + text.size()) % 8 != 0) text.push_back(' ');
  std::string out(8, '\0');
  const std::uint64_t len = text.size();
  std::memcpy(out.data(), &len, 8);
  out += text;
  out += payload;
  return out;
}

void write(const fs::path& path, const Container& container, DType dtype) {
  write_file_atomic(path, serialize(container, dtype));
}

}  // namespace safetensors

CheckpointPaths checkpoint_paths(const fs::path& path) {
  if (path.extension() == ".safetensors") {
    return {path, path.parent_path() / kConfigFileName};
  }
  return {path / kTensorFileName, path / kConfigFileName};
}

json config_to_json(const ModelConfig& c) {
  return json{{"hidden_dim", c.hidden_dim},     {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},           {"n_kv_groups", c.n_kv_groups},
              {"head_dim", c.head_dim},         {"ffn_dim", c.ffn_dim},
              {"vocab_size", c.vocab_size},     {"swish_beta", c.swish_beta},
              {"rope_enabled", c.rope_enabled}, {"rope_theta", c.rope_theta},
              {"rmsnorm_eps", c.rmsnorm_eps}};
}

ModelConfig config_from_json(const json& j) {
  if (!j.is_object()) throw InvalidInput("config: expected a JSON object");
  static const std::vector<std::string> kKnown = {
      "hidden_dim", "n_layers",   "n_heads",      "n_kv_groups", "head_dim",   "ffn_dim",
      "vocab_size", "swish_beta", "rope_enabled", "rope_theta",  "rmsnorm_eps"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(kKnown.begin(), kKnown.end(), k) == kKnown.end()) {
      throw InvalidInput("config: unknown key '" + k + "'");
    }
  }
  ModelConfig c;
  try {
    auto count = [&](const char* key) {
      const json& v = j.at(key);
      if (!v.is_number_integer() || v.get<long long>() < 1) {
        throw InvalidInput(std::string("config: '") + key + "' must be a positive integer");
      }
      return v.get<std::size_t>();
    };
    c.hidden_dim = count("hidden_dim");
    c.n_layers = count("n_layers");
    c.n_heads = count("n_heads");
    c.n_kv_groups = count("n_kv_groups");
    c.head_dim = count("head_dim");
    c.ffn_dim = count("ffn_dim");
    c.vocab_size = count("vocab_size");
    c.swish_beta = j.value("swish_beta", 1.0);
    c.rope_enabled = j.value("rope_enabled", false);
    c.rope_theta = j.value("rope_theta", 10000.0);
    c.rmsnorm_eps = j.value("rmsnorm_eps", 1e-5);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw InvalidInput(path.string() + ": malformed config JSON: " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const InvalidInput& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

safetensors::Container to_container(const ModelWeights& w) {
  safetensors::Container c;
  w.for_each_tensor([&](const std::string& name, const Matrix& m, TensorRank rank) {
    safetensors::Tensor t;
    t.shape = rank == TensorRank::kVector ? std::vector<std::size_t>{m.cols()}
                                          : std::vector<std::size_t>{m.rows(), m.cols()};
    t.values.assign(m.data().begin(), m.data().end());
    c.tensors.emplace_back(name, std::move(t));
  });
  return c;
}

ModelWeights from_container(const safetensors::Container& c, const ModelConfig& config,
                            const std::string& origin) {
  ModelWeights w = zero_weights(config);
  w.for_each_tensor([&](const std::string& name, Matrix& m, TensorRank rank) {
    const safetensors::Tensor* t = c.find(name);
    if (t == nullptr) throw LoadError(origin + ": missing tensor '" + name + "'");
    const std::vector<std::size_t> want = rank == TensorRank::kVector
                                              ? std::vector<std::size_t>{m.cols()}
                                              : std::vector<std::size_t>{m.rows(), m.cols()};
    if (t->shape != want) {
      throw LoadError(origin + ": tensor '" + name + "' has shape " + shape_text(t->shape) +
                      ", expected " + shape_text(want));
    }
    std::copy(t->values.begin(), t->values.end(), m.data().begin());
  });
  try {
    w.validate();
  } catch (const InvalidInput& e) {
    throw LoadError(origin + ": " + e.what());
  }
  return w;
}

ModelWeights load_checkpoint(const fs::path& path) {
  const CheckpointPaths p = checkpoint_paths(path);
  ModelConfig config;
  try {
    config = load_config(p.config);
  } catch (const IoError& e) {
    throw LoadError(e.what());
  } catch (const InvalidInput& e) {
    throw LoadError(e.what());
  }
  return from_container(safetensors::read(p.tensors), config, p.tensors.string());
}

void save_checkpoint(const ModelWeights& w, const fs::path& path, DType dtype) {
  w.validate();
  const CheckpointPaths p = checkpoint_paths(path);
  std::error_code ec;
  if (!p.tensors.parent_path().empty()) {
    fs::create_directories(p.tensors.parent_path(), ec);
    if (ec) {
      throw IoError("cannot create directory " + p.tensors.parent_path().string() + ": " +
                    ec.message());
    }
  }
  safetensors::write(p.tensors, to_container(w), dtype);
  write_file_atomic(p.config, config_to_json(w.config).dump(2) + "\n");
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace symmerge
