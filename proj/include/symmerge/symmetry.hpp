// SPDX-License-Identifier: Apache-2.0
//
// Function-preserving weight transforms of the toy decoder:
//  * FFN hidden permutation:  gate/up rows and down columns reordered together,
//  * per KV-group rotations:  r_qk on the shared query/key space, r_vo on the
//    value space with the output columns counter-rotated,
//  * per KV-group scale:      queries times alpha, keys divided by alpha.
// Every component is optional; an absent component is the identity.
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "symmerge/matrix.hpp"
#include "symmerge/model.hpp"

namespace symmerge {

inline constexpr double kOrthogonalityTolerance = 1e-9;

using Permutation = std::vector<std::size_t>;

struct GroupTransform {
  std::optional<Matrix> r_qk;
  std::optional<Matrix> r_vo;
  std::optional<double> alpha;

  bool is_identity() const { return !r_qk && !r_vo && !alpha; }
};

struct LayerTransform {
  // New FFN neuron i is old neuron perm[i].
  std::optional<Permutation> perm;
  // Indexed by KV group; missing trailing entries are identity.
  std::vector<GroupTransform> groups;

  bool is_identity() const;
};

struct SymmetryTransform {
  std::map<std::size_t, LayerTransform> layers;  // omitted layers are identity

  bool is_identity() const;
};

// Throws InvalidTransform if `t` does not fit `config` or a component breaks
// its invariant (bijection, orthogonality within kOrthogonalityTolerance,
// finite non-zero alpha).
void validate_transform(const SymmetryTransform& t, const ModelConfig& config);

// Applies one layer's transform in place: permutation, then per group
// rotation followed by scaling.
void apply_layer_transform(LayerWeights& layer, const LayerTransform& t, const GqaLayout& layout);

ModelWeights apply_transform(const ModelWeights& w, const SymmetryTransform& t);

SymmetryTransform invert(const SymmetryTransform& t);

// apply(w, compose(a, b)) == apply(apply(w, a), b)
SymmetryTransform compose(const SymmetryTransform& first, const SymmetryTransform& second);

// Every layer gets a uniform permutation and every group Haar rotations and
// alpha ~ log-uniform[0.5, 2].
SymmetryTransform random_transform(const ModelConfig& config, std::uint64_t seed);

// Largest entrywise deviation of any component from its identity element.
double deviation_from_identity(const SymmetryTransform& t);

Permutation invert_permutation(const Permutation& p);
bool is_permutation(const Permutation& p, std::size_t n);

// {"<layer>": {"perm": [...], "groups": [{"r_qk": [...], "r_vo": [...], "alpha": x}]}}
nlohmann::json transform_to_json(const SymmetryTransform& t);
SymmetryTransform transform_from_json(const nlohmann::json& j);

}  // namespace symmerge
