// SPDX-License-Identifier: Apache-2.0
#include "symmerge/arithmetic.hpp"

#include <doctest.h>

#include <cmath>

#include "symmerge/error.hpp"

using namespace symmerge;
namespace fs = std::filesystem;

namespace {

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

ModelWeights perturb(const ModelWeights& w, double sigma, std::uint64_t seed) {
  ModelWeights out = w;
  Rng rng(seed);
  out.for_each_tensor([&](const std::string&, Matrix& m, TensorRank) {
    for (double& v : m.data()) v += rng.normal(0.0, sigma);
  });
  return out;
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

}  // namespace

TEST_CASE("extract then apply reproduces the fine-tuned model bit for bit") {
  const ModelConfig c = small_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ModelWeights base = gen_toy_model(c, seed);
    // Independent draws, so most differences are inexact in binary64.
    const ModelWeights tuned = gen_toy_model(c, 1000 + seed);
    const TaskVector tau = extract_task_vector(tuned, base, "tuned", "base");
    CHECK(apply_task_vector(base, tau) == tuned);
  }
}

TEST_CASE("naive subtraction alone would not round-trip") {
  // Guards the premise of the residual term: 1 + (x - 1) != x for small x.
  const double b = 1.0;
  const double f = 1e-17 + 3e-33;
  CHECK(b + (f - b) != f);
  const ModelWeights base = gen_toy_model(small_config(), 1);
  const ModelWeights tuned = gen_toy_model(small_config(), 2);
  const TaskVector tau = extract_task_vector(tuned, base);
  double residual_sq = 0.0;
  tau.residual.for_each_tensor(
      [&](const std::string&, const Matrix& m, TensorRank) { residual_sq += squared_norm(m); });
  CHECK(residual_sq > 0.0);
}

TEST_CASE("lambda 0 leaves the target unchanged") {
  const ModelConfig c = small_config();
  const ModelWeights base = gen_toy_model(c, 3);
  const TaskVector tau = extract_task_vector(perturb(base, 0.1, 4), base);
  const ModelWeights target = gen_toy_model(c, 5);
  CHECK(apply_task_vector(target, tau, 0.0) == target);
}

TEST_CASE("application is linear in lambda") {
  const ModelConfig c = small_config();
  const ModelWeights base = gen_toy_model(c, 6);
  const TaskVector tau = extract_task_vector(perturb(base, 0.1, 7), base);
  const ModelWeights target = gen_toy_model(c, 8);
  const ModelWeights twice = apply_task_vector(apply_task_vector(target, tau, 0.5), tau, 0.5);
  CHECK(max_weight_diff(twice, apply_task_vector(target, tau, 1.0)) <= 1e-12);
  const ModelWeights back = apply_task_vector(apply_task_vector(target, tau, 0.7), tau, -0.7);
  CHECK(max_weight_diff(back, target) <= 1e-12);
}

TEST_CASE("norm is the Frobenius norm of the full difference") {
  const ModelConfig c = small_config();
  const ModelWeights base = gen_toy_model(c, 9);
  const ModelWeights tuned = perturb(base, 0.01, 10);
  const TaskVector tau = extract_task_vector(tuned, base);
  double sq = 0.0;
  std::vector<const Matrix*> bs;
  base.for_each_tensor([&](const std::string&, const Matrix& m, TensorRank) { bs.push_back(&m); });
  std::size_t i = 0;
  tuned.for_each_tensor(
      [&](const std::string&, const Matrix& m, TensorRank) { sq += squared_norm(m - *bs[i++]); });
  CHECK(tau.norm() == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
}

TEST_CASE("task vectors include norms and embeddings") {
  const ModelConfig c = small_config();
  const ModelWeights base = gen_toy_model(c, 11);
  ModelWeights tuned = base;
  tuned.final_norm(0, 3) += 0.5;
  tuned.embedding(2, 1) -= 0.25;
  const TaskVector tau = extract_task_vector(tuned, base);
  CHECK(tau.delta.final_norm(0, 3) == 0.5);
  CHECK(tau.delta.embedding(2, 1) == -0.25);
  CHECK(tau.delta.layers[0].wq == Matrix(c.hidden_dim, c.hidden_dim));
}

TEST_CASE("mismatched configs are rejected") {
  ModelConfig other = small_config();
  other.ffn_dim = 32;
  const ModelWeights a = gen_toy_model(small_config(), 1);
  const ModelWeights b = gen_toy_model(other, 1);
  CHECK_THROWS_AS(extract_task_vector(a, b), ConfigMismatch);
  const TaskVector tau = extract_task_vector(a, a);
  CHECK_THROWS_AS(apply_task_vector(b, tau, 1.0), ConfigMismatch);
  CHECK_THROWS_AS(apply_task_vector(a, tau, NAN), InvalidInput);
}

TEST_CASE("task vector files round-trip") {
  const fs::path dir = fs::temp_directory_path() / "symmerge_arithmetic_test";
  fs::remove_all(dir);
  const ModelConfig c = small_config();
  const ModelWeights base = gen_toy_model(c, 12);
  const ModelWeights tuned = gen_toy_model(c, 13);
  TaskVector tau = extract_task_vector(tuned, base, "ft-13", "base-12");
  tau.lambda = 0.75;
  save_task_vector(tau, dir / "tau.safetensors");
  const TaskVector back = load_task_vector(dir / "tau.safetensors");
  CHECK(back.source_id == "ft-13");
  CHECK(back.base_id == "base-12");
  CHECK(back.lambda == 0.75);
  CHECK(apply_task_vector(base, back, 1.0) == tuned);

  save_task_vector(tau, dir / "tau32.safetensors", DType::kF32);
  const TaskVector narrow = load_task_vector(dir / "tau32.safetensors");
  CHECK(max_weight_diff(apply_task_vector(base, narrow, 1.0), tuned) < 1e-6);

  save_checkpoint(base, dir / "ckpt", DType::kF64);
  CHECK_THROWS_AS(load_task_vector(dir / "ckpt" / kTensorFileName), LoadError);
}

TEST_CASE("transfer with target = reference and no alignment yields the skill model") {
  const ModelConfig c = small_config();
  const ModelWeights reference = gen_toy_model(c, 14);
  const ModelWeights skill = perturb(reference, 0.01, 15);
  TransferOptions opts;
  opts.align = false;
  CHECK(aligned_transfer(reference, reference, skill, opts).merged == skill);
  opts.align = true;
  const TransferResult aligned = aligned_transfer(reference, reference, skill, opts);
  CHECK(aligned.transform.is_identity());
  CHECK(aligned.merged == skill);
}

TEST_CASE("aligned transfer undoes a symmetry-only divergence") {
  const ModelConfig c = small_config();
  const ModelWeights reference = gen_toy_model(c, 16);
  const ModelWeights skill = perturb(reference, 0.01, 17);
  const ModelWeights target = apply_transform(reference, random_transform(c, 18));
  const TransferResult aligned = aligned_transfer(target, reference, skill, TransferOptions{});
  CHECK(max_weight_diff(aligned.merged, skill) < 1e-8);
  TransferOptions plain;
  plain.align = false;
  const TransferResult naive = aligned_transfer(target, reference, skill, plain);
  const auto seqs = random_token_sequences(8, 12, c.vocab_size, 19);
  CHECK(mean_squared_logit_error(aligned.merged, skill, seqs) <
        mean_squared_logit_error(naive.merged, skill, seqs));
}

TEST_CASE("lambda 0 transfer gives the aligned target") {
  const ModelConfig c = small_config();
  const ModelWeights reference = gen_toy_model(c, 20);
  const ModelWeights skill = perturb(reference, 0.01, 21);
  const ModelWeights target = apply_transform(perturb(reference, 0.01, 22), random_transform(c, 23));
  TransferOptions opts;
  opts.lambda = 0.0;
  const TransferResult r = aligned_transfer(target, reference, skill, opts);
  CHECK(r.merged == apply_transform(target, r.transform));
}
