// SPDX-License-Identifier: Apache-2.0
#include "symmerge/model.hpp"

#include <algorithm>
#include <cmath>

#include "symmerge/error.hpp"
#include "symmerge/random.hpp"

namespace symmerge {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw InvalidInput(std::string("config: ") + name + " must be >= 1");
  };
  positive(hidden_dim, "hidden_dim");
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(n_kv_groups, "n_kv_groups");
  positive(head_dim, "head_dim");
  positive(ffn_dim, "ffn_dim");
  positive(vocab_size, "vocab_size");
  if (n_heads % n_kv_groups != 0) {
    throw InvalidInput("config: n_heads (" + std::to_string(n_heads) +
                       ") must be divisible by n_kv_groups (" + std::to_string(n_kv_groups) + ")");
  }
  if (hidden_dim != n_heads * head_dim) {
    throw InvalidInput("config: hidden_dim (" + std::to_string(hidden_dim) +
                       ") must equal n_heads * head_dim (" + std::to_string(n_heads * head_dim) +
                       ")");
  }
  if (rope_enabled && head_dim % 2 != 0) {
    throw InvalidInput("config: rotary embedding needs an even head_dim");
  }
  if (!std::isfinite(swish_beta) || !std::isfinite(rope_theta) || !(rope_theta > 0.0) ||
      !std::isfinite(rmsnorm_eps) || rmsnorm_eps < 0.0) {
    throw InvalidInput("config: swish_beta, rope_theta and rmsnorm_eps must be finite and valid");
  }
}

void require_same_config(const ModelConfig& a, const ModelConfig& b, const std::string& context) {
  if (!(a == b)) {
    throw ConfigMismatch(context + ": model configurations differ");
  }
}

void ModelWeights::for_each_tensor(
    const std::function<void(const std::string&, const Matrix&, TensorRank)>& fn) const {
  fn("embed.weight", embedding, TensorRank::kMatrix);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    const LayerWeights& l = layers[i];
    fn(p + "attn.wq.weight", l.wq, TensorRank::kMatrix);
    fn(p + "attn.wk.weight", l.wk, TensorRank::kMatrix);
    fn(p + "attn.wv.weight", l.wv, TensorRank::kMatrix);
    fn(p + "attn.wo.weight", l.wo, TensorRank::kMatrix);
    fn(p + "ffn.gate.weight", l.w_gate, TensorRank::kMatrix);
    fn(p + "ffn.up.weight", l.w_up, TensorRank::kMatrix);
    fn(p + "ffn.down.weight", l.w_down, TensorRank::kMatrix);
    fn(p + "attn_norm.weight", l.attn_norm, TensorRank::kVector);
    fn(p + "ffn_norm.weight", l.ffn_norm, TensorRank::kVector);
  }
  fn("final_norm.weight", final_norm, TensorRank::kVector);
  fn("unembed.weight", unembedding, TensorRank::kMatrix);
}

void ModelWeights::for_each_tensor(
    const std::function<void(const std::string&, Matrix&, TensorRank)>& fn) {
  const ModelWeights& self = *this;
  self.for_each_tensor([&](const std::string& name, const Matrix& m, TensorRank rank) {
    fn(name, const_cast<Matrix&>(m), rank);
  });
}

ModelWeights zero_weights(const ModelConfig& c) {
  c.validate();
  ModelWeights w;
  w.config = c;
  const std::size_t q_dim = c.n_heads * c.head_dim;
  const std::size_t kv_dim = c.n_kv_groups * c.head_dim;
  w.embedding = Matrix(c.vocab_size, c.hidden_dim);
  w.layers.resize(c.n_layers);
  for (LayerWeights& l : w.layers) {
    l.wq = Matrix(q_dim, c.hidden_dim);
    l.wk = Matrix(kv_dim, c.hidden_dim);
    l.wv = Matrix(kv_dim, c.hidden_dim);
    l.wo = Matrix(c.hidden_dim, q_dim);
    l.w_gate = Matrix(c.ffn_dim, c.hidden_dim);
    l.w_up = Matrix(c.ffn_dim, c.hidden_dim);
    l.w_down = Matrix(c.hidden_dim, c.ffn_dim);
    l.attn_norm = Matrix(1, c.hidden_dim);
    l.ffn_norm = Matrix(1, c.hidden_dim);
  }
  w.final_norm = Matrix(1, c.hidden_dim);
  w.unembedding = Matrix(c.vocab_size, c.hidden_dim);
  return w;
}

void ModelWeights::validate() const {
  config.validate();
  if (layers.size() != config.n_layers) {
    throw InvalidInput("weights: expected " + std::to_string(config.n_layers) + " layers, found " +
                       std::to_string(layers.size()));
  }
  const ModelWeights reference = zero_weights(config);
  std::vector<const Matrix*> expected;
  reference.for_each_tensor(
      [&](const std::string&, const Matrix& m, TensorRank) { expected.push_back(&m); });
  std::size_t index = 0;
  for_each_tensor([&](const std::string& name, const Matrix& m, TensorRank) {
    const Matrix& want = *expected[index++];
    if (m.rows() != want.rows() || m.cols() != want.cols()) {
      throw InvalidInput("weights: tensor " + name + " has shape " + m.shape_string() +
                         ", expected " + want.shape_string());
    }
    if (!m.all_finite()) throw InvalidInput("weights: tensor " + name + " has non-finite entries");
  });
}

GqaLayout GqaLayout::from_config(const ModelConfig& c) {
  GqaLayout layout;
  layout.head_dim = c.head_dim;
  const std::size_t per = c.heads_per_group();
  for (std::size_t j = 0; j < c.n_kv_groups; ++j) {
    KvGroup g;
    g.kv = j;
    for (std::size_t h = j * per; h < (j + 1) * per; ++h) g.heads.push_back(h);
    layout.groups.push_back(std::move(g));
  }
  return layout;
}

AttentionGroup extract_group(const LayerWeights& layer, const GqaLayout& layout, std::size_t group) {
  const std::size_t d = layout.head_dim;
  const KvGroup& g = layout.groups.at(group);
  AttentionGroup blocks;
  for (std::size_t h : g.heads) {
    blocks.q.push_back(layer.wq.row_block(h * d, d));
    blocks.o.push_back(layer.wo.col_block(h * d, d));
  }
  blocks.k = layer.wk.row_block(g.kv * d, d);
  blocks.v = layer.wv.row_block(g.kv * d, d);
  return blocks;
}

void store_group(LayerWeights& layer, const GqaLayout& layout, std::size_t group,
                 const AttentionGroup& blocks) {
  const std::size_t d = layout.head_dim;
  const KvGroup& g = layout.groups.at(group);
  for (std::size_t i = 0; i < g.heads.size(); ++i) {
    layer.wq.set_row_block(g.heads[i] * d, blocks.q[i]);
    layer.wo.set_col_block(g.heads[i] * d, blocks.o[i]);
  }
  layer.wk.set_row_block(g.kv * d, blocks.k);
  layer.wv.set_row_block(g.kv * d, blocks.v);
}

ModelWeights gen_toy_model(const ModelConfig& config, std::uint64_t seed) {
  ModelWeights w = zero_weights(config);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
  w.for_each_tensor([&](const std::string&, Matrix& m, TensorRank rank) {
    const double offset = rank == TensorRank::kVector ? 1.0 : 0.0;
    for (double& v : m.data()) v = offset + rng.normal(0.0, scale);
  });
  return w;
}

namespace {

Matrix rms_norm(const Matrix& x, const Matrix& weight, double eps) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto xr = x.row(t);
    double ms = 0.0;
    for (double v : xr) ms += v * v;
    ms /= static_cast<double>(xr.size());
    const double inv = 1.0 / std::sqrt(ms + eps);
    auto orow = out.row(t);
    for (std::size_t i = 0; i < xr.size(); ++i) orow[i] = xr[i] * inv * weight(0, i);
  }
  return out;
}

// Rotates consecutive pairs (2i, 2i+1) of every head by pos * theta^(-2i/d).
void apply_rope(Matrix& x, std::size_t n_heads, std::size_t head_dim, double theta) {
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = x.row(t);
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < head_dim / 2; ++i) {
        const double freq =
            std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(t) * freq;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        double& a = row[h * head_dim + 2 * i];
        double& b = row[h * head_dim + 2 * i + 1];
        const double a0 = a;
        const double b0 = b;
        a = a0 * c - b0 * s;
        b = a0 * s + b0 * c;
      }
    }
  }
}

void check_tokens(const ModelConfig& c, const TokenSequence& tokens) {
  if (tokens.empty()) throw InvalidInput("forward: empty token sequence");
  for (std::uint32_t t : tokens) {
    if (t >= c.vocab_size) {
      throw InvalidInput("forward: token id " + std::to_string(t) + " out of range for vocab " +
                         std::to_string(c.vocab_size));
    }
  }
}

// Shared by forward and capture; `trace` receives per-layer sites when non-null.
Matrix run(const ModelWeights& w, const TokenSequence& tokens,
           std::vector<LayerActivations>* trace) {
  const ModelConfig& c = w.config;
  check_tokens(c, tokens);
  const std::size_t n = tokens.size();
  const std::size_t d = c.head_dim;
  const std::size_t per = c.heads_per_group();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix h(n, c.hidden_dim);
  for (std::size_t t = 0; t < n; ++t) {
    auto src = w.embedding.row(tokens[t]);
    std::copy(src.begin(), src.end(), h.row(t).begin());
  }

  for (std::size_t li = 0; li < w.layers.size(); ++li) {
    const LayerWeights& l = w.layers[li];
    const Matrix x = rms_norm(h, l.attn_norm, c.rmsnorm_eps);
    Matrix q = matmul_nt(x, l.wq);
    Matrix k = matmul_nt(x, l.wk);
    const Matrix v = matmul_nt(x, l.wv);

    if (trace != nullptr) {
      LayerActivations acts;
      for (std::size_t j = 0; j < c.n_kv_groups; ++j) {
        GroupActivations g;
        for (std::size_t hh = j * per; hh < (j + 1) * per; ++hh) g.q.push_back(q.col_block(hh * d, d));
        g.k = k.col_block(j * d, d);
        g.v = v.col_block(j * d, d);
        acts.groups.push_back(std::move(g));
      }
      trace->push_back(std::move(acts));
    }

    if (c.rope_enabled) {
      apply_rope(q, c.n_heads, d, c.rope_theta);
      apply_rope(k, c.n_kv_groups, d, c.rope_theta);
    }

    Matrix attn(n, c.n_heads * d);
    std::vector<double> scores(n);
    for (std::size_t head = 0; head < c.n_heads; ++head) {
      const std::size_t kv = head / per;
      for (std::size_t t = 0; t < n; ++t) {
        double mx = -INFINITY;
        for (std::size_t s = 0; s <= t; ++s) {
          double dotp = 0.0;
          for (std::size_t i = 0; i < d; ++i) dotp += q(t, head * d + i) * k(s, kv * d + i);
          scores[s] = dotp * inv_sqrt_d;
          mx = std::max(mx, scores[s]);
        }
        double denom = 0.0;
        for (std::size_t s = 0; s <= t; ++s) {
          scores[s] = std::exp(scores[s] - mx);
          denom += scores[s];
        }
        for (std::size_t s = 0; s <= t; ++s) {
          const double p = scores[s] / denom;
          for (std::size_t i = 0; i < d; ++i) attn(t, head * d + i) += p * v(s, kv * d + i);
        }
      }
    }
    h += matmul_nt(attn, l.wo);

    const Matrix x2 = rms_norm(h, l.ffn_norm, c.rmsnorm_eps);
    Matrix gate = matmul_nt(x2, l.w_gate);
    const Matrix up = matmul_nt(x2, l.w_up);
    for (std::size_t i = 0; i < gate.size(); ++i) {
      const double z = gate.data()[i];
      const double swish = z / (1.0 + std::exp(-c.swish_beta * z));
      gate.data()[i] = swish * up.data()[i];
    }
    h += matmul_nt(gate, l.w_down);
    if (trace != nullptr) trace->back().ffn_hidden = std::move(gate);
  }

  const Matrix xf = rms_norm(h, w.final_norm, c.rmsnorm_eps);
  return matmul_nt(xf, w.unembedding);
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.empty()) return bottom;
  Matrix out(top.rows() + bottom.rows(), bottom.cols());
  out.set_row_block(0, top);
  out.set_row_block(top.rows(), bottom);
  return out;
}

}  // namespace

Matrix forward(const ModelWeights& w, const TokenSequence& tokens) {
  return run(w, tokens, nullptr);
}

ActivationTrace capture_activations(const ModelWeights& w,
                                    const std::vector<TokenSequence>& batches) {
  if (batches.empty()) throw InvalidInput("capture_activations: no token batches");
  ActivationTrace trace;
  trace.layers.resize(w.layers.size());
  for (const TokenSequence& seq : batches) {
    std::vector<LayerActivations> sites;
    run(w, seq, &sites);
    for (std::size_t li = 0; li < sites.size(); ++li) {
      LayerActivations& acc = trace.layers[li];
      LayerActivations& cur = sites[li];
      acc.ffn_hidden = vstack(acc.ffn_hidden, cur.ffn_hidden);
      if (acc.groups.empty()) acc.groups.resize(cur.groups.size());
      for (std::size_t j = 0; j < cur.groups.size(); ++j) {
        GroupActivations& ag = acc.groups[j];
        GroupActivations& cg = cur.groups[j];
        if (ag.q.empty()) ag.q.resize(cg.q.size());
        for (std::size_t k = 0; k < cg.q.size(); ++k) ag.q[k] = vstack(ag.q[k], cg.q[k]);
        ag.k = vstack(ag.k, cg.k);
        ag.v = vstack(ag.v, cg.v);
      }
    }
    trace.tokens += seq.size();
  }
  return trace;
}

double max_logit_difference(const ModelWeights& a, const ModelWeights& b,
                            const std::vector<TokenSequence>& sequences) {
  double worst = 0.0;
  for (const TokenSequence& seq : sequences) {
    worst = std::max(worst, max_abs_diff(forward(a, seq), forward(b, seq)));
  }
  return worst;
}

double mean_squared_logit_error(const ModelWeights& a, const ModelWeights& b,
                                const std::vector<TokenSequence>& sequences) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const TokenSequence& seq : sequences) {
    const Matrix d = forward(a, seq) - forward(b, seq);
    sum += squared_norm(d);
    count += d.size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::vector<TokenSequence> random_token_sequences(std::size_t count, std::size_t length,
                                                  std::size_t vocab_size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenSequence> out(count, TokenSequence(length));
  for (TokenSequence& seq : out)
    for (std::uint32_t& t : seq) t = static_cast<std::uint32_t>(rng.index(vocab_size));
  return out;
}

}  // namespace symmerge
