// SPDX-License-Identifier: Apache-2.0
//
// Solvers that find the symmetry transform moving model 2 as close as
// possible to model 1, either from weight cross-products (weights mode) or
// from captured activation cross-covariances (activations mode).
//
// Per layer the order is fixed: FFN permutation, then per KV group the VO
// rotation, the QK rotation and the QK scale on the rotated blocks.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "symmerge/linalg.hpp"
#include "symmerge/model.hpp"
#include "symmerge/symmetry.hpp"

namespace symmerge {

enum class AlignmentMode { kWeights, kActivations };

std::string mode_name(AlignmentMode mode);
AlignmentMode parse_mode(const std::string& name);

struct SymmetrySet {
  bool permutation = true;
  bool rotation = true;
  bool scale = true;

  bool any() const { return permutation || rotation || scale; }
  // "perm,rot,scale" (any non-empty subset, order free).
  static SymmetrySet parse(const std::string& text);
  std::string to_string() const;
};

struct AlignmentOptions {
  AlignmentMode mode = AlignmentMode::kWeights;
  SymmetrySet symmetries;
  std::vector<TokenSequence> batches;  // required iff mode == kActivations
};

// Solutions closer than this to the identity element are reported as the
// identity itself.
inline constexpr double kIdentitySnapTolerance = 1e-10;
// Cross matrices whose singular values all fall below this are degenerate.
inline constexpr double kDegenerateSingularValue = 1e-12;
// Alternating QK rotation/scale refinement when both families are enabled.
inline constexpr int kMaxQkRefinements = 500;
inline constexpr double kQkRefinementTolerance = 1e-14;

// --- FFN permutation -------------------------------------------------------

// W_G1 W_G2^T + W_U1 W_U2^T + W_D1^T W_D2 (ffn x ffn).
Matrix ffn_similarity(const LayerWeights& l1, const LayerWeights& l2);
// Sum of squared distances of gate, up and down after permuting model 2.
double ffn_squared_distance(const LayerWeights& l1, const LayerWeights& l2, const Permutation& p);
Permutation align_ffn_weights(const LayerWeights& l1, const LayerWeights& l2);

// --- Rotations -------------------------------------------------------------

struct ProcrustesSolution {
  Matrix rotation;
  double objective_before = 0.0;  // <I, M>
  double objective_after = 0.0;   // <R, M>
  std::vector<double> singular_values;
  bool degenerate = false;
};

// argmax over orthogonal R of <R, m>, R = U V^T.
ProcrustesSolution procrustes(const Matrix& m);

// sum_k Q1_k Q2_k^T + K1 K2^T
Matrix qk_cross_matrix(const AttentionGroup& g1, const AttentionGroup& g2);
// V1 V2^T + sum_k O1_k^T O2_k; optimal for V -> R V, O -> O R^T.
Matrix vo_cross_matrix(const AttentionGroup& g1, const AttentionGroup& g2);

ProcrustesSolution align_qk_rotation(const AttentionGroup& g1, const AttentionGroup& g2);
ProcrustesSolution align_vo_rotation(const AttentionGroup& g1, const AttentionGroup& g2);

// --- QK scale --------------------------------------------------------------

// Sufficient statistics of sum_k ||Q1_k - a Q2_k||^2 + ||K1 - K2 / a||^2.
struct ScaleStatistics {
  double q1_sq = 0.0;     // sum ||Q1_k||^2
  double q_cross = 0.0;   // sum <Q1_k, Q2_k>
  double q2_sq = 0.0;     // sum ||Q2_k||^2
  double k1_sq = 0.0;     // ||K1||^2
  double k_cross = 0.0;   // <K1, K2>
  double k2_sq = 0.0;     // ||K2||^2

  double objective(double alpha) const;
  // Stationarity condition multiplied by alpha^3.
  linalg::QuarticCoeffs quartic() const;
};

ScaleStatistics scale_statistics(const AttentionGroup& g1, const AttentionGroup& g2);

struct ScaleSolution {
  double alpha = 1.0;
  std::vector<double> roots;  // all real roots of the quartic
  double objective_before = 0.0;  // at alpha = 1
  double objective_after = 0.0;
  bool degenerate = false;
};

// Global minimizer over the real non-zero roots; ties prefer alpha > 0, then
// the root closest to 1.
ScaleSolution solve_scale(const ScaleStatistics& stats);
ScaleSolution align_qk_scale(const AttentionGroup& g1, const AttentionGroup& g2_rotated);

// --- Whole-model alignment -------------------------------------------------

struct BlockDistances {
  double wq = 0.0;
  double wk = 0.0;
  double wv = 0.0;
  double wo = 0.0;

  double qk() const;  // sqrt(wq^2 + wk^2)
  double vo() const;  // sqrt(wv^2 + wo^2)
};

struct RotationReport {
  bool enabled = false;
  double objective_before = 0.0;
  double objective_after = 0.0;
  bool identity = true;
};

struct ScaleReport {
  bool enabled = false;
  double alpha = 1.0;
  std::vector<double> roots;
  double objective_before = 0.0;
  double objective_after = 0.0;
};

struct GroupReport {
  std::size_t group = 0;
  RotationReport qk;
  RotationReport vo;
  ScaleReport scale;
  BlockDistances before;
  BlockDistances after;
};

struct FfnReport {
  bool enabled = false;
  double score_before = 0.0;  // identity assignment
  double score_after = 0.0;
  std::size_t moved = 0;      // neurons not mapped to themselves
  double distance_before = 0.0;
  double distance_after = 0.0;
};

struct LayerReport {
  std::size_t layer = 0;
  FfnReport ffn;
  std::vector<GroupReport> groups;
  std::vector<std::string> warnings;
};

struct AlignmentReport {
  AlignmentMode mode = AlignmentMode::kWeights;
  SymmetrySet symmetries;
  std::size_t tokens = 0;
  std::vector<LayerReport> layers;
  std::vector<std::string> warnings;
  double total_distance_before = 0.0;  // Frobenius over all aligned tensors
  double total_distance_after = 0.0;
};

struct AlignmentResult {
  SymmetryTransform transform;
  AlignmentReport report;
};

// Transform t such that apply_transform(w2, t) is aligned to w1.
// Throws ConfigMismatch when the configs differ, InvalidInput for bad options.
AlignmentResult align_models(const ModelWeights& w1, const ModelWeights& w2,
                             const AlignmentOptions& opts);
AlignmentResult align_models_by_activation(const ModelWeights& w1, const ModelWeights& w2,
                                           const std::vector<TokenSequence>& batches,
                                           AlignmentOptions opts);

nlohmann::json report_to_json(const AlignmentReport& report);
std::string report_to_text(const AlignmentReport& report);

// Worker count for layer-parallel work: SYMMERGE_THREADS if set, else the
// hardware concurrency, capped at `jobs`.
std::size_t worker_count(std::size_t jobs);

}  // namespace symmerge
