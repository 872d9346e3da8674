// SPDX-License-Identifier: Apache-2.0
//
// Task vectors (fine-tuned minus base, per tensor) and the aligned skill
// transfer: move the target into the reference model's parameter space,
// then add the reference pair's task vector.
#pragma once

#include <filesystem>
#include <string>

#include "symmerge/align.hpp"
#include "symmerge/checkpoint.hpp"
#include "symmerge/model.hpp"
#include "symmerge/symmetry.hpp"

namespace symmerge {

// The difference is kept as an unevaluated sum delta + residual, where
// residual is the exact rounding error of the subtraction. Adding both back
// onto the base reproduces the fine-tuned weights bit for bit.
struct TaskVector {
  ModelWeights delta;
  ModelWeights residual;
  std::string source_id;
  std::string base_id;
  double lambda = 1.0;

  const ModelConfig& config() const { return delta.config; }
  // Frobenius norm of the full difference.
  double norm() const;
};

TaskVector extract_task_vector(const ModelWeights& fine_tuned, const ModelWeights& base,
                               std::string source_id = {}, std::string base_id = {});

// target + lambda * tau, tensor by tensor.
ModelWeights apply_task_vector(const ModelWeights& target, const TaskVector& tau, double lambda);
inline ModelWeights apply_task_vector(const ModelWeights& target, const TaskVector& tau) {
  return apply_task_vector(target, tau, tau.lambda);
}

// F64 keeps the residual tensors (as "<name>.residual"); narrower dtypes
// fold it into the delta.
void save_task_vector(const TaskVector& tau, const std::filesystem::path& file,
                      DType dtype = DType::kF64);
TaskVector load_task_vector(const std::filesystem::path& file);

struct TransferOptions {
  bool align = true;  // false: plain task arithmetic
  AlignmentOptions alignment;
  double lambda = 1.0;
};

struct TransferResult {
  ModelWeights merged;
  SymmetryTransform transform;  // applied to the target
  AlignmentReport report;
};

// aligned(target -> reference) + lambda * (skill_source - reference).
TransferResult aligned_transfer(const ModelWeights& target, const ModelWeights& reference,
                                const ModelWeights& skill_source, const TransferOptions& opts);

// Same pipeline with a precomputed transform for the target.
TransferResult transfer_with_transform(const ModelWeights& target, const ModelWeights& reference,
                                       const ModelWeights& skill_source,
                                       const SymmetryTransform& transform, double lambda);

}  // namespace symmerge
