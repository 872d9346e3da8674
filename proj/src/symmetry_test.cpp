// SPDX-License-Identifier: Apache-2.0
#include "symmerge/symmetry.hpp"

#include <doctest.h>

#include <cmath>

#include "symmerge/error.hpp"
#include "symmerge/linalg.hpp"

using namespace symmerge;

namespace {

ModelConfig small_config(bool rope = false) {
  ModelConfig c;
  c.hidden_dim = 16;
  c.n_layers = 2;
  c.n_heads = 4;
  c.n_kv_groups = 2;
  c.head_dim = 4;
  c.ffn_dim = 24;
  c.vocab_size = 32;
  c.rope_enabled = rope;
  return c;
}

double max_weight_diff(const ModelWeights& a, const ModelWeights& b) {
  std::vector<const Matrix*> bs;
  b.for_each_tensor([&](const std::string&, const Matrix& m, TensorRank) { bs.push_back(&m); });
  double worst = 0.0;
  std::size_t i = 0;
  a.for_each_tensor([&](const std::string&, const Matrix& m, TensorRank) {
    worst = std::max(worst, max_abs_diff(m, *bs[i++]));
  });
  return worst;
}

SymmetryTransform only(const ModelConfig& c, std::uint64_t seed, bool perm, bool rqk, bool rvo,
                       bool alpha) {
  SymmetryTransform t = random_transform(c, seed);
  for (auto& [li, lt] : t.layers) {
    if (!perm) lt.perm.reset();
    for (GroupTransform& g : lt.groups) {
      if (!rqk) g.r_qk.reset();
      if (!rvo) g.r_vo.reset();
      if (!alpha) g.alpha.reset();
    }
  }
  return t;
}

}  // namespace

TEST_CASE("identity transform leaves weights bit-identical") {
  const ModelWeights w = gen_toy_model(small_config(), 1);
  CHECK(apply_transform(w, SymmetryTransform{}) == w);
  SymmetryTransform explicit_identity;
  explicit_identity.layers[0].groups.resize(2);
  CHECK(explicit_identity.is_identity());
  CHECK(apply_transform(w, explicit_identity) == w);
}

TEST_CASE("each symmetry family preserves logits without rotary embedding") {
  const ModelConfig c = small_config();
  const ModelWeights w = gen_toy_model(c, 2);
  const auto seqs = random_token_sequences(8, 12, c.vocab_size, 3);
  struct Case {
    const char* name;
    bool perm, rqk, rvo, alpha;
    double tol;
  };
  for (const Case& k : {Case{"perm", true, false, false, false, 1e-9},
                        Case{"r_qk", false, true, false, false, 1e-8},
                        Case{"r_vo", false, false, true, false, 1e-8},
                        Case{"alpha", false, false, false, true, 1e-8},
                        Case{"all", true, true, true, true, 1e-8}}) {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
      const SymmetryTransform t = only(c, seed, k.perm, k.rqk, k.rvo, k.alpha);
      CAPTURE(k.name);
      CHECK(!t.is_identity());
      CHECK(max_logit_difference(w, apply_transform(w, t), seqs) <= k.tol);
    }
  }
}

TEST_CASE("with rotary embedding, value rotations and scales still preserve logits") {
  const ModelConfig c = small_config(true);
  const ModelWeights w = gen_toy_model(c, 4);
  const auto seqs = random_token_sequences(6, 12, c.vocab_size, 5);
  CHECK(max_logit_difference(w, apply_transform(w, only(c, 1, true, false, true, true)), seqs) <=
        1e-8);
  // A generic query/key rotation does not commute with the rotary embedding.
  CHECK(max_logit_difference(w, apply_transform(w, only(c, 1, false, true, false, false)), seqs) >
        1e-6);
}

TEST_CASE("apply matches the explicit block formulas") {
  const ModelConfig c = small_config();
  const ModelWeights w = gen_toy_model(c, 6);
  const SymmetryTransform t = random_transform(c, 7);
  const ModelWeights moved = apply_transform(w, t);
  const LayerTransform& lt = t.layers.at(1);
  const Permutation& p = *lt.perm;
  const LayerWeights& a = w.layers[1];
  const LayerWeights& b = moved.layers[1];
  for (std::size_t i = 0; i < c.ffn_dim; ++i) {
    for (std::size_t h = 0; h < c.hidden_dim; ++h) {
      CHECK(b.w_gate(i, h) == a.w_gate(p[i], h));
      CHECK(b.w_up(i, h) == a.w_up(p[i], h));
      CHECK(b.w_down(h, i) == a.w_down(h, p[i]));
    }
  }
  const GroupTransform& g = lt.groups[1];
  const std::size_t d = c.head_dim;
  // Head 3 belongs to group 1: Q -> alpha R Q, K -> R K / alpha, V -> R V, O -> O R^T.
  const Matrix q = a.wq.row_block(3 * d, d);
  const Matrix k = a.wk.row_block(d, d);
  const Matrix v = a.wv.row_block(d, d);
  const Matrix o = a.wo.col_block(3 * d, d);
  Matrix want_q = matmul(*g.r_qk, q);
  want_q *= *g.alpha;
  Matrix want_k = matmul(*g.r_qk, k);
  want_k *= 1.0 / *g.alpha;
  CHECK(max_abs_diff(b.wq.row_block(3 * d, d), want_q) < 1e-14);
  CHECK(max_abs_diff(b.wk.row_block(d, d), want_k) < 1e-14);
  CHECK(max_abs_diff(b.wv.row_block(d, d), matmul(*g.r_vo, v)) < 1e-14);
  CHECK(max_abs_diff(b.wo.col_block(3 * d, d), matmul_nt(o, *g.r_vo)) < 1e-14);
  CHECK(b.attn_norm == a.attn_norm);
  CHECK(moved.embedding == w.embedding);
}

TEST_CASE("invert undoes a transform") {
  const ModelConfig c = small_config();
  const ModelWeights w = gen_toy_model(c, 8);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SymmetryTransform t = random_transform(c, seed);
    CHECK(max_weight_diff(apply_transform(apply_transform(w, t), invert(t)), w) < 1e-13);
    CHECK(max_weight_diff(apply_transform(apply_transform(w, invert(t)), t), w) < 1e-13);
  }
}

TEST_CASE("compose matches sequential application and is associative") {
  const ModelConfig c = small_config();
  const ModelWeights w = gen_toy_model(c, 9);
  const SymmetryTransform a = random_transform(c, 1);
  const SymmetryTransform b = random_transform(c, 2);
  const SymmetryTransform d = random_transform(c, 3);
  CHECK(max_weight_diff(apply_transform(w, compose(a, b)), apply_transform(apply_transform(w, a), b)) <
        1e-13);
  CHECK(max_weight_diff(apply_transform(w, compose(compose(a, b), d)),
                        apply_transform(w, compose(a, compose(b, d)))) < 1e-13);
  CHECK(deviation_from_identity(compose(a, invert(a))) < 1e-13);
}

TEST_CASE("validation rejects broken components") {
  const ModelConfig c = small_config();
  SymmetryTransform t;
  t.layers[0].perm = Permutation(c.ffn_dim, 0);
  CHECK_THROWS_AS(validate_transform(t, c), InvalidTransform);

  t = {};
  t.layers[5] = LayerTransform{};
  CHECK_THROWS_AS(validate_transform(t, c), InvalidTransform);

  t = {};
  t.layers[0].groups.resize(1);
  Matrix r = Matrix::identity(c.head_dim);
  r(0, 1) = 0.1;
  t.layers[0].groups[0].r_qk = r;
  CHECK_THROWS_AS(validate_transform(t, c), InvalidTransform);
  const ModelWeights w = gen_toy_model(c, 1);
  CHECK_THROWS_AS(apply_transform(w, t), InvalidTransform);

  t = {};
  t.layers[0].groups.resize(1);
  t.layers[0].groups[0].alpha = 0.0;
  CHECK_THROWS_AS(validate_transform(t, c), InvalidTransform);

  t = {};
  t.layers[0].groups.resize(3);
  CHECK_THROWS_AS(validate_transform(t, c), InvalidTransform);

  t = {};
  t.layers[0].groups.resize(1);
  t.layers[0].groups[0].r_vo = Matrix::identity(c.head_dim + 1);
  CHECK_THROWS_AS(validate_transform(t, c), InvalidTransform);
}

TEST_CASE("JSON round-trip preserves every component") {
  const ModelConfig c = small_config();
  const SymmetryTransform t = random_transform(c, 12);
  const SymmetryTransform back = transform_from_json(nlohmann::json::parse(transform_to_json(t).dump()));
  CHECK(deviation_from_identity(compose(t, invert(back))) < 1e-14);
  const ModelWeights w = gen_toy_model(c, 2);
  CHECK(apply_transform(w, back) == apply_transform(w, t));
  CHECK(transform_to_json(SymmetryTransform{}) == nlohmann::json::object());
}

TEST_CASE("JSON parsing rejects malformed transforms") {
  CHECK_THROWS(transform_from_json(nlohmann::json::parse(R"({"x": {}})")));
  CHECK_THROWS(transform_from_json(nlohmann::json::parse(R"({"0": {"perm": "abc"}})")));
  CHECK_THROWS(transform_from_json(nlohmann::json::parse(R"({"0": {"groups": [{"r_qk": [[1, 0], [0]]}]}})")));
  CHECK_THROWS(transform_from_json(nlohmann::json::parse(R"({"0": {"bogus": 1}})")));
}

TEST_CASE("permutation helpers") {
  const Permutation p{2, 0, 3, 1};
  CHECK(is_permutation(p, 4));
  CHECK(!is_permutation(p, 5));
  CHECK(!is_permutation({0, 0, 1}, 3));
  const Permutation inv = invert_permutation(p);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(inv[p[i]] == i);
}

TEST_CASE("equivariance: transforming both models preserves their distance") {
  // Orthogonal blocks and permutations are isometries, so with alpha absent
  // the Frobenius distance between two models is unchanged.
  const ModelConfig c = small_config();
  const ModelWeights a = gen_toy_model(c, 20);
  const ModelWeights b = gen_toy_model(c, 21);
  const SymmetryTransform t = only(c, 5, true, true, true, false);
  auto distance = [](const ModelWeights& x, const ModelWeights& y) {
    std::vector<const Matrix*> ys;
    y.for_each_tensor([&](const std::string&, const Matrix& m, TensorRank) { ys.push_back(&m); });
    double sq = 0.0;
    std::size_t i = 0;
    x.for_each_tensor([&](const std::string&, const Matrix& m, TensorRank) {
      sq += squared_norm(m - *ys[i++]);
    });
    return std::sqrt(sq);
  };
  CHECK(distance(apply_transform(a, t), apply_transform(b, t)) ==
        doctest::Approx(distance(a, b)).epsilon(1e-12));
}

TEST_CASE("random_transform is seed-determined and valid") {
  const ModelConfig c = small_config();
  const SymmetryTransform a = random_transform(c, 3);
  CHECK_NOTHROW(validate_transform(a, c));
  CHECK(transform_to_json(a) == transform_to_json(random_transform(c, 3)));
  for (const auto& [li, lt] : a.layers) {
    for (const GroupTransform& g : lt.groups) {
      REQUIRE(g.alpha);
      CHECK(std::abs(*g.alpha) >= 0.5);
      CHECK(std::abs(*g.alpha) <= 2.0);
    }
  }
}
