// SPDX-License-Identifier: Apache-2.0
#include "symmerge/model.hpp"

#include <doctest.h>

#include <cmath>

#include "symmerge/error.hpp"

using namespace symmerge;

namespace {

// Same fixture as tests/oracles/forward_scalar_oracle.py.
Matrix fill(std::size_t rows, std::size_t cols, int salt) {
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(r, c) = static_cast<double>(static_cast<int>((r * 7 + c * 3 + salt) % 11) - 5) / 10.0;
  return m;
}

Matrix norm_weight(std::size_t n, int salt) {
  Matrix m(1, n);
  for (std::size_t i = 0; i < n; ++i)
    m(0, i) = 1.0 + static_cast<double>(static_cast<int>((i * 5 + salt) % 7) - 3) / 20.0;
  return m;
}

ModelWeights scalar_fixture(bool rope) {
  ModelConfig c;
  c.hidden_dim = 2;
  c.n_layers = 1;
  c.n_heads = 1;
  c.n_kv_groups = 1;
  c.head_dim = 2;
  c.ffn_dim = 3;
  c.vocab_size = 4;
  c.rope_enabled = rope;
  ModelWeights w = zero_weights(c);
  w.embedding = fill(4, 2, 1);
  LayerWeights& l = w.layers[0];
  l.wq = fill(2, 2, 2);
  l.wk = fill(2, 2, 3);
  l.wv = fill(2, 2, 4);
  l.wo = fill(2, 2, 5);
  l.w_gate = fill(3, 2, 6);
  l.w_up = fill(3, 2, 7);
  l.w_down = fill(2, 3, 8);
  l.attn_norm = norm_weight(2, 1);
  l.ffn_norm = norm_weight(2, 2);
  w.final_norm = norm_weight(2, 3);
  w.unembedding = fill(4, 2, 9);
  w.validate();
  return w;
}

void check_logits(const Matrix& got, const std::vector<std::vector<double>>& want) {
  REQUIRE(got.rows() == want.size());
  for (std::size_t t = 0; t < want.size(); ++t) {
    REQUIRE(got.cols() == want[t].size());
    for (std::size_t v = 0; v < want[t].size(); ++v) {
      CAPTURE(t);
      CAPTURE(v);
      CHECK(std::abs(got(t, v) - want[t][v]) <= 1e-12);
    }
  }
}

ModelConfig small_config() {
  ModelConfig c;
  c.hidden_dim = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.n_kv_groups = 2;
  c.head_dim = 4;
  c.ffn_dim = 24;
  c.vocab_size = 32;
  return c;
}

}  // namespace

TEST_CASE("forward matches the scalar oracle without rotary embedding") {
  check_logits(forward(scalar_fixture(false), {1, 3}),
               {{0.7608761070043373, -0.2511887039097583, -0.3422282671547401, 0.7381162161930918},
                {-0.34729559434950297, -0.13596054584901623, 0.5738965040978634,
                 -0.16983133186278299}});
}

TEST_CASE("forward matches the scalar oracle with rotary embedding") {
  check_logits(forward(scalar_fixture(true), {1, 3}),
               {{0.7608761070043373, -0.2511887039097583, -0.3422282671547401, 0.7381162161930918},
                {-0.37753818736251205, -0.11970060613770953, 0.5770391975920279,
                 -0.2033532364300777}});
}

TEST_CASE("config validation") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.n_kv_groups = 3;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.hidden_dim = 15;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.head_dim = 3;
  c.hidden_dim = 12;
  c.rope_enabled = true;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.vocab_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}

TEST_CASE("require_same_config reports a mismatch") {
  ModelConfig a = small_config();
  ModelConfig b = a;
  CHECK_NOTHROW(require_same_config(a, b, "x"));
  b.ffn_dim = 32;
  CHECK_THROWS_AS(require_same_config(a, b, "x"), ConfigMismatch);
}

TEST_CASE("gen_toy_model is seed-deterministic") {
  const ModelConfig c = small_config();
  const ModelWeights a = gen_toy_model(c, 5);
  const ModelWeights b = gen_toy_model(c, 5);
  const ModelWeights other = gen_toy_model(c, 6);
  CHECK(a == b);
  CHECK(max_abs_diff(a.layers[0].wq, other.layers[0].wq) > 0.0);
  CHECK_NOTHROW(a.validate());
  CHECK(a.layers[1].attn_norm(0, 0) != 0.0);
}

TEST_CASE("forward output shape and finiteness") {
  const ModelWeights w = gen_toy_model(small_config(), 1);
  TokenSequence tokens(16);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<std::uint32_t>(i * 3 % 32);
  const Matrix logits = forward(w, tokens);
  CHECK(logits.rows() == 16);
  CHECK(logits.cols() == 32);
  CHECK(logits.all_finite());
  CHECK(forward(w, tokens) == logits);
}

TEST_CASE("forward is causal") {
  const ModelWeights w = gen_toy_model(small_config(), 2);
  const Matrix full = forward(w, {1, 2, 3, 4, 5});
  const Matrix prefix = forward(w, {1, 2, 3});
  CHECK(max_abs_diff(full.row_block(0, 3), prefix) == 0.0);
}

TEST_CASE("forward rejects bad tokens") {
  const ModelWeights w = gen_toy_model(small_config(), 1);
  CHECK_THROWS_AS(forward(w, {0, 32}), InvalidInput);
  CHECK_THROWS_AS(forward(w, {}), InvalidInput);
}

TEST_CASE("validate reports the offending tensor") {
  ModelWeights w = gen_toy_model(small_config(), 1);
  w.layers[1].wk = Matrix(3, 16);
  try {
    w.validate();
    FAIL("expected InvalidInput");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("layers.1.attn.wk.weight") != std::string::npos);
  }
}

TEST_CASE("group extraction round-trips") {
  const ModelConfig c = small_config();
  const ModelWeights w = gen_toy_model(c, 3);
  const GqaLayout layout = GqaLayout::from_config(c);
  REQUIRE(layout.groups.size() == 2);
  CHECK(layout.groups[1].heads == std::vector<std::size_t>{2, 3});
  LayerWeights copy = w.layers[0];
  copy.wq = Matrix(copy.wq.rows(), copy.wq.cols());
  copy.wk = Matrix(copy.wk.rows(), copy.wk.cols());
  copy.wv = Matrix(copy.wv.rows(), copy.wv.cols());
  copy.wo = Matrix(copy.wo.rows(), copy.wo.cols());
  for (std::size_t j = 0; j < 2; ++j) store_group(copy, layout, j, extract_group(w.layers[0], layout, j));
  CHECK(copy == w.layers[0]);
}

TEST_CASE("capture_activations concatenates batches") {
  const ModelConfig c = small_config();
  const ModelWeights w = gen_toy_model(c, 4);
  const std::vector<TokenSequence> batches{{1, 2, 3}, {4, 5}};
  const ActivationTrace t = capture_activations(w, batches);
  CHECK(t.tokens == 5);
  REQUIRE(t.layers.size() == 2);
  CHECK(t.layers[0].ffn_hidden.rows() == 5);
  CHECK(t.layers[0].ffn_hidden.cols() == c.ffn_dim);
  REQUIRE(t.layers[1].groups.size() == 2);
  CHECK(t.layers[1].groups[0].q.size() == 2);
  CHECK(t.layers[1].groups[0].k.rows() == 5);
  CHECK(t.layers[1].groups[0].v.cols() == c.head_dim);
  CHECK_THROWS_AS(capture_activations(w, {}), InvalidInput);
}

TEST_CASE("captured values equal an explicit recomputation") {
  const ModelConfig c = small_config();
  const ModelWeights w = gen_toy_model(c, 4);
  const ActivationTrace t = capture_activations(w, {{7}});
  // One token in layer 0: attention output is v itself, so q/k/v are linear
  // maps of the normalized embedding.
  const Matrix e = w.embedding.row_block(7, 1);
  double ms = 0.0;
  for (double v : e.data()) ms += v * v;
  ms /= static_cast<double>(e.size());
  Matrix x = e;
  for (std::size_t i = 0; i < x.cols(); ++i)
    x(0, i) = e(0, i) / std::sqrt(ms + c.rmsnorm_eps) * w.layers[0].attn_norm(0, i);
  const Matrix k = matmul_nt(x, w.layers[0].wk);
  CHECK(max_abs_diff(t.layers[0].groups[1].k, k.col_block(c.head_dim, c.head_dim)) < 1e-15);
  const Matrix q = matmul_nt(x, w.layers[0].wq);
  CHECK(max_abs_diff(t.layers[0].groups[1].q[1], q.col_block(3 * c.head_dim, c.head_dim)) < 1e-15);
}

TEST_CASE("logit comparison helpers") {
  const ModelWeights a = gen_toy_model(small_config(), 1);
  const ModelWeights b = gen_toy_model(small_config(), 2);
  const auto seqs = random_token_sequences(4, 6, 32, 9);
  CHECK(seqs.size() == 4);
  CHECK(seqs[0].size() == 6);
  CHECK(random_token_sequences(4, 6, 32, 9) == seqs);
  CHECK(max_logit_difference(a, a, seqs) == 0.0);
  CHECK(mean_squared_logit_error(a, a, seqs) == 0.0);
  const double mse = mean_squared_logit_error(a, b, seqs);
  const double mx = max_logit_difference(a, b, seqs);
  CHECK(mse > 0.0);
  CHECK(mse <= mx * mx);
}
