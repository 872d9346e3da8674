// SPDX-License-Identifier: Apache-2.0
//
// Toy Llama-style decoder: pre-norm residual blocks with RMSNorm, causal
// grouped-query attention (optional rotary embedding) and a SwiGLU FFN,
// no biases, untied unembedding. Used as the function-preservation oracle
// for symmetry transforms and as the activation source for act-based
// alignment.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "symmerge/matrix.hpp"

namespace symmerge {

struct ModelConfig {
  std::size_t hidden_dim = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 8;
  std::size_t n_kv_groups = 2;
  std::size_t head_dim = 8;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 256;
  double swish_beta = 1.0;
  bool rope_enabled = false;
  double rope_theta = 10000.0;
  double rmsnorm_eps = 1e-5;

  std::size_t heads_per_group() const { return n_heads / n_kv_groups; }

  // Throws InvalidInput describing the first violated invariant.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Throws ConfigMismatch unless a and b describe the same geometry.
void require_same_config(const ModelConfig& a, const ModelConfig& b, const std::string& context);

struct LayerWeights {
  Matrix wq;         // (n_heads * head_dim) x hidden
  Matrix wk;         // (n_kv_groups * head_dim) x hidden
  Matrix wv;         // (n_kv_groups * head_dim) x hidden
  Matrix wo;         // hidden x (n_heads * head_dim)
  Matrix w_gate;     // ffn x hidden
  Matrix w_up;       // ffn x hidden
  Matrix w_down;     // hidden x ffn
  Matrix attn_norm;  // 1 x hidden
  Matrix ffn_norm;   // 1 x hidden

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

// 1-D tensors (norm weights) are stored as 1 x n matrices but serialized
// with a rank-1 shape.
enum class TensorRank { kMatrix, kVector };

struct ModelWeights {
  ModelConfig config;
  Matrix embedding;  // vocab x hidden
  std::vector<LayerWeights> layers;
  Matrix final_norm;   // 1 x hidden
  Matrix unembedding;  // vocab x hidden

  // Visits every tensor in canonical order with its canonical name.
  void for_each_tensor(
      const std::function<void(const std::string&, const Matrix&, TensorRank)>& fn) const;
  void for_each_tensor(const std::function<void(const std::string&, Matrix&, TensorRank)>& fn);

  // Checks every tensor shape against `config` and that all entries are finite.
  void validate() const;

  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

// Model with every tensor allocated (zero-filled) for `config`.
ModelWeights zero_weights(const ModelConfig& config);

struct KvGroup {
  std::size_t kv = 0;
  std::vector<std::size_t> heads;  // query heads sharing key/value head `kv`
};

// Head h belongs to group h / (n_heads / n_kv_groups).
struct GqaLayout {
  std::size_t head_dim = 0;
  std::vector<KvGroup> groups;

  static GqaLayout from_config(const ModelConfig& config);
};

// Per-group views of one attention layer. q[k] and o[k] follow the order
// of KvGroup::heads.
struct AttentionGroup {
  std::vector<Matrix> q;  // head_dim x hidden rows of wq
  Matrix k;               // head_dim x hidden rows of wk
  Matrix v;               // head_dim x hidden rows of wv
  std::vector<Matrix> o;  // hidden x head_dim columns of wo
};

AttentionGroup extract_group(const LayerWeights& layer, const GqaLayout& layout, std::size_t group);
void store_group(LayerWeights& layer, const GqaLayout& layout, std::size_t group,
                 const AttentionGroup& blocks);

// Deterministic per (config, seed). Matrix entries ~ N(0, 1/sqrt(hidden));
// norm weights ~ 1 + N(0, 1/sqrt(hidden)).
ModelWeights gen_toy_model(const ModelConfig& config, std::uint64_t seed);

using TokenSequence = std::vector<std::uint32_t>;

// Logits (tokens x vocab) for one causal sequence.
Matrix forward(const ModelWeights& w, const TokenSequence& tokens);

struct GroupActivations {
  std::vector<Matrix> q;  // per member head, tokens x head_dim (pre-rotary)
  Matrix k;               // tokens x head_dim (pre-rotary)
  Matrix v;               // tokens x head_dim
};

struct LayerActivations {
  Matrix ffn_hidden;  // tokens x ffn_dim, Swish(g) * u before the down projection
  std::vector<GroupActivations> groups;
};

// Activations of the prompt tokens only; sequences are concatenated along
// the token axis in batch order.
struct ActivationTrace {
  std::size_t tokens = 0;
  std::vector<LayerActivations> layers;
};

ActivationTrace capture_activations(const ModelWeights& w,
                                    const std::vector<TokenSequence>& batches);

// max |logits_a - logits_b| over all sequences.
double max_logit_difference(const ModelWeights& a, const ModelWeights& b,
                            const std::vector<TokenSequence>& sequences);
// Mean over every logit entry of (logits_a - logits_b)^2.
double mean_squared_logit_error(const ModelWeights& a, const ModelWeights& b,
                                const std::vector<TokenSequence>& sequences);

// `count` sequences of `length` uniform token ids.
std::vector<TokenSequence> random_token_sequences(std::size_t count, std::size_t length,
                                                  std::size_t vocab_size, std::uint64_t seed);

}  // namespace symmerge
