// SPDX-License-Identifier: Apache-2.0
//
// End-to-end flows through the library: checkpoints on disk, alignment,
// transfer and verification against the forward pass.
#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "symmerge/align.hpp"
#include "symmerge/arithmetic.hpp"
#include "symmerge/checkpoint.hpp"
#include "symmerge/symmetry.hpp"

using namespace symmerge;
namespace fs = std::filesystem;

namespace {

ModelConfig config(bool rope = false) {
  ModelConfig c;
  c.hidden_dim = 32;
  c.n_layers = 3;
  c.n_heads = 4;
  c.n_kv_groups = 2;
  c.head_dim = 8;
  c.ffn_dim = 48;
  c.vocab_size = 40;
  c.rope_enabled = rope;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("symmerge_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

ModelWeights perturb(const ModelWeights& w, double sigma, std::uint64_t seed) {
  ModelWeights out = w;
  Rng rng(seed);
  out.for_each_tensor([&](const std::string&, Matrix& m, TensorRank) {
    for (double& v : m.data()) v += rng.normal(0.0, sigma);
  });
  return out;
}

}  // namespace

TEST_CASE("disk round-trip, alignment and transfer agree with in-memory results") {
  const ModelConfig c = config();
  const ModelWeights reference = gen_toy_model(c, 1);
  const ModelWeights skill = perturb(reference, 5e-3, 2);
  const ModelWeights target = apply_transform(perturb(reference, 5e-3, 3), random_transform(c, 4));
  const fs::path dir = scratch("roundtrip");
  save_checkpoint(reference, dir / "ref", DType::kF64);
  save_checkpoint(skill, dir / "skill", DType::kF64);
  save_checkpoint(target, dir / "target", DType::kF64);

  const ModelWeights r = load_checkpoint(dir / "ref");
  const ModelWeights s = load_checkpoint(dir / "skill");
  const ModelWeights t = load_checkpoint(dir / "target");
  const TransferResult from_disk = aligned_transfer(t, r, s, TransferOptions{});
  const TransferResult in_memory = aligned_transfer(target, reference, skill, TransferOptions{});
  CHECK(from_disk.merged == in_memory.merged);

  // The transform survives JSON and still preserves the target's function.
  const SymmetryTransform parsed =
      transform_from_json(nlohmann::json::parse(transform_to_json(from_disk.transform).dump()));
  const auto seqs = random_token_sequences(16, 16, c.vocab_size, 5);
  CHECK(max_logit_difference(target, apply_transform(target, parsed), seqs) <= 1e-8);

  TransferOptions plain;
  plain.align = false;
  const TransferResult naive = aligned_transfer(t, r, s, plain);
  const ModelWeights truth = apply_task_vector(
      perturb(reference, 5e-3, 3), extract_task_vector(skill, reference), 1.0);
  CHECK(mean_squared_logit_error(from_disk.merged, truth, seqs) <
        mean_squared_logit_error(naive.merged, truth, seqs));
}

TEST_CASE("F32 checkpoints lose precision but keep transforms function-preserving") {
  const ModelConfig c = config();
  const fs::path dir = scratch("f32");
  save_checkpoint(gen_toy_model(c, 6), dir, DType::kF32);
  const ModelWeights w = load_checkpoint(dir);
  const auto seqs = random_token_sequences(8, 16, c.vocab_size, 7);
  CHECK(max_logit_difference(w, apply_transform(w, random_transform(c, 8)), seqs) <= 1e-8);
}

TEST_CASE("with rotary embedding, permutation and scale alignment stays exact") {
  const ModelConfig c = config(true);
  const ModelWeights w1 = gen_toy_model(c, 9);
  SymmetryTransform t0 = random_transform(c, 10);
  for (auto& [li, lt] : t0.layers)
    for (GroupTransform& g : lt.groups) {
      g.r_qk.reset();
      g.r_vo.reset();
    }
  const ModelWeights w2 = apply_transform(w1, t0);
  const auto seqs = random_token_sequences(8, 16, c.vocab_size, 11);
  CHECK(max_logit_difference(w1, w2, seqs) <= 1e-8);

  AlignmentOptions opts;
  opts.symmetries = SymmetrySet::parse("perm,scale");
  const AlignmentResult r = align_models(w1, w2, opts);
  const ModelWeights back = apply_transform(w2, r.transform);
  CHECK(max_logit_difference(w1, back, seqs) <= 1e-8);
  CHECK(r.report.total_distance_after < 1e-8);
}

TEST_CASE("layer-parallel alignment is independent of the worker count") {
  const ModelConfig c = config();
  const ModelWeights w1 = gen_toy_model(c, 12);
  const ModelWeights w2 = apply_transform(perturb(w1, 0.01, 13), random_transform(c, 14));
  setenv("SYMMERGE_THREADS", "1", 1);
  const AlignmentResult serial = align_models(w1, w2, AlignmentOptions{});
  setenv("SYMMERGE_THREADS", "3", 1);
  const AlignmentResult parallel = align_models(w1, w2, AlignmentOptions{});
  unsetenv("SYMMERGE_THREADS");
  CHECK(transform_to_json(serial.transform) == transform_to_json(parallel.transform));
  CHECK(report_to_json(serial.report) == report_to_json(parallel.report));
}

TEST_CASE("activation alignment on a divergent pair lowers transfer error") {
  const ModelConfig c = config();
  const ModelWeights reference = gen_toy_model(c, 15);
  const ModelWeights skill = perturb(reference, 5e-3, 16);
  const ModelWeights untransformed = perturb(reference, 5e-3, 17);
  const ModelWeights target = apply_transform(untransformed, random_transform(c, 18));
  TransferOptions opts;
  opts.alignment.mode = AlignmentMode::kActivations;
  opts.alignment.batches = random_token_sequences(16, 32, c.vocab_size, 19);
  const TransferResult aligned = aligned_transfer(target, reference, skill, opts);
  TransferOptions plain;
  plain.align = false;
  const TransferResult naive = aligned_transfer(target, reference, skill, plain);
  const ModelWeights truth =
      apply_task_vector(untransformed, extract_task_vector(skill, reference), 1.0);
  const auto held_out = random_token_sequences(16, 16, c.vocab_size, 20);
  CHECK(mean_squared_logit_error(aligned.merged, truth, held_out) <
        0.5 * mean_squared_logit_error(naive.merged, truth, held_out));
}
