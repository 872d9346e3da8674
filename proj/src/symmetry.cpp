// SPDX-License-Identifier: Apache-2.0
#include "symmerge/symmetry.hpp"

#include <algorithm>
#include <cmath>

#include "symmerge/error.hpp"
#include "symmerge/linalg.hpp"
#include "symmerge/random.hpp"

namespace symmerge {

using nlohmann::json;

bool LayerTransform::is_identity() const {
  return !perm && std::all_of(groups.begin(), groups.end(),
                              [](const GroupTransform& g) { return g.is_identity(); });
}

bool SymmetryTransform::is_identity() const {
  return std::all_of(layers.begin(), layers.end(),
                     [](const auto& kv) { return kv.second.is_identity(); });
}

bool is_permutation(const Permutation& p, std::size_t n) {
  if (p.size() != n) return false;
  std::vector<char> seen(n, 0);
  for (std::size_t v : p) {
    if (v >= n || seen[v]) return false;
    seen[v] = 1;
  }
  return true;
}

Permutation invert_permutation(const Permutation& p) {
  Permutation inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = i;
  return inv;
}

namespace {

std::string where(std::size_t layer, std::size_t group) {
  return "layer " + std::to_string(layer) + " group " + std::to_string(group);
}

void check_rotation(const Matrix& r, std::size_t head_dim, const std::string& what) {
  if (r.rows() != head_dim || r.cols() != head_dim) {
    throw InvalidTransform(what + ": rotation has shape " + r.shape_string() + ", expected [" +
                           std::to_string(head_dim) + ", " + std::to_string(head_dim) + "]");
  }
  if (!r.all_finite()) throw InvalidTransform(what + ": rotation has non-finite entries");
  const double err = orthogonality_error(r);
  if (err > kOrthogonalityTolerance) {
    throw InvalidTransform(what + ": rotation is not orthogonal, max |R^T R - I| = " +
                           std::to_string(err) + " exceeds " +
                           std::to_string(kOrthogonalityTolerance));
  }
}

// Permutes rows of m: new row i = old row p[i].
Matrix gather_rows(const Matrix& m, const Permutation& p) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto src = m.row(p[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix gather_cols(const Matrix& m, const Permutation& p) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t i = 0; i < p.size(); ++i) out(r, i) = m(r, p[i]);
  return out;
}

}  // namespace

void validate_transform(const SymmetryTransform& t, const ModelConfig& config) {
  for (const auto& [li, lt] : t.layers) {
    if (li >= config.n_layers) {
      throw InvalidTransform("transform references layer " + std::to_string(li) +
                             " but the model has " + std::to_string(config.n_layers));
    }
    if (lt.perm && !is_permutation(*lt.perm, config.ffn_dim)) {
      throw InvalidTransform("layer " + std::to_string(li) +
                             ": perm is not a bijection on [0, " + std::to_string(config.ffn_dim) +
                             ")");
    }
    if (lt.groups.size() > config.n_kv_groups) {
      throw InvalidTransform("layer " + std::to_string(li) + ": " +
                             std::to_string(lt.groups.size()) + " groups given, model has " +
                             std::to_string(config.n_kv_groups));
    }
    for (std::size_t j = 0; j < lt.groups.size(); ++j) {
      const GroupTransform& g = lt.groups[j];
      if (g.r_qk) check_rotation(*g.r_qk, config.head_dim, where(li, j) + " r_qk");
      if (g.r_vo) check_rotation(*g.r_vo, config.head_dim, where(li, j) + " r_vo");
      if (g.alpha && (!std::isfinite(*g.alpha) || *g.alpha == 0.0)) {
        throw InvalidTransform(where(li, j) + ": alpha must be finite and non-zero");
      }
    }
  }
}

void apply_layer_transform(LayerWeights& layer, const LayerTransform& t, const GqaLayout& layout) {
  if (t.perm) {
    layer.w_gate = gather_rows(layer.w_gate, *t.perm);
    layer.w_up = gather_rows(layer.w_up, *t.perm);
    layer.w_down = gather_cols(layer.w_down, *t.perm);
  }
  for (std::size_t j = 0; j < t.groups.size(); ++j) {
    const GroupTransform& g = t.groups[j];
    if (g.is_identity()) continue;
    AttentionGroup blocks = extract_group(layer, layout, j);
    if (g.r_qk) {
      for (Matrix& q : blocks.q) q = matmul(*g.r_qk, q);
      blocks.k = matmul(*g.r_qk, blocks.k);
    }
    if (g.r_vo) {
      blocks.v = matmul(*g.r_vo, blocks.v);
      for (Matrix& o : blocks.o) o = matmul_nt(o, *g.r_vo);
    }
    if (g.alpha) {
      for (Matrix& q : blocks.q) q *= *g.alpha;
      blocks.k *= 1.0 / *g.alpha;
    }
    store_group(layer, layout, j, blocks);
  }
}

ModelWeights apply_transform(const ModelWeights& w, const SymmetryTransform& t) {
  validate_transform(t, w.config);
  ModelWeights out = w;
  const GqaLayout layout = GqaLayout::from_config(w.config);
  for (const auto& [li, lt] : t.layers) apply_layer_transform(out.layers[li], lt, layout);
  return out;
}

SymmetryTransform invert(const SymmetryTransform& t) {
  SymmetryTransform inv;
  for (const auto& [li, lt] : t.layers) {
    LayerTransform il;
    if (lt.perm) il.perm = invert_permutation(*lt.perm);
    for (const GroupTransform& g : lt.groups) {
      GroupTransform ig;
      if (g.r_qk) ig.r_qk = g.r_qk->transposed();
      if (g.r_vo) ig.r_vo = g.r_vo->transposed();
      if (g.alpha) ig.alpha = 1.0 / *g.alpha;
      il.groups.push_back(std::move(ig));
    }
    inv.layers.emplace(li, std::move(il));
  }
  return inv;
}

namespace {

// second * first, where either may be absent (identity).
std::optional<Matrix> chain(const std::optional<Matrix>& first, const std::optional<Matrix>& second,
                            const std::string& what) {
  if (!first) return second;
  if (!second) return first;
  if (first->rows() != second->rows() || first->cols() != second->cols()) {
    throw InvalidTransform("compose: " + what + " rotations differ in size (" +
                           first->shape_string() + " vs " + second->shape_string() + ")");
  }
  return matmul(*second, *first);
}

}  // namespace

SymmetryTransform compose(const SymmetryTransform& first, const SymmetryTransform& second) {
  SymmetryTransform out = first;
  for (const auto& [li, b] : second.layers) {
    LayerTransform& a = out.layers[li];
    if (b.perm) {
      if (a.perm) {
        if (a.perm->size() != b.perm->size()) {
          throw InvalidTransform("compose: layer " + std::to_string(li) +
                                 " permutations differ in length");
        }
        Permutation p(b.perm->size());
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = (*a.perm)[(*b.perm)[i]];
        a.perm = std::move(p);
      } else {
        a.perm = b.perm;
      }
    }
    if (a.groups.size() < b.groups.size()) a.groups.resize(b.groups.size());
    for (std::size_t j = 0; j < b.groups.size(); ++j) {
      GroupTransform& ga = a.groups[j];
      const GroupTransform& gb = b.groups[j];
      const std::string w = where(li, j);
      ga.r_qk = chain(ga.r_qk, gb.r_qk, w + " r_qk");
      ga.r_vo = chain(ga.r_vo, gb.r_vo, w + " r_vo");
      if (gb.alpha) ga.alpha = ga.alpha ? *ga.alpha * *gb.alpha : *gb.alpha;
    }
  }
  return out;
}

SymmetryTransform random_transform(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  SymmetryTransform t;
  for (std::size_t li = 0; li < config.n_layers; ++li) {
    LayerTransform lt;
    lt.perm = rng.permutation(config.ffn_dim);
    for (std::size_t j = 0; j < config.n_kv_groups; ++j) {
      GroupTransform g;
      g.r_qk = linalg::random_orthogonal(config.head_dim, rng);
      g.r_vo = linalg::random_orthogonal(config.head_dim, rng);
      g.alpha = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
      lt.groups.push_back(std::move(g));
    }
    t.layers.emplace(li, std::move(lt));
  }
  return t;
}

double deviation_from_identity(const SymmetryTransform& t) {
  double dev = 0.0;
  for (const auto& [li, lt] : t.layers) {
    if (lt.perm) {
      for (std::size_t i = 0; i < lt.perm->size(); ++i)
        if ((*lt.perm)[i] != i) dev = std::max(dev, 1.0);
    }
    for (const GroupTransform& g : lt.groups) {
      if (g.r_qk) dev = std::max(dev, max_abs_diff(*g.r_qk, Matrix::identity(g.r_qk->rows())));
      if (g.r_vo) dev = std::max(dev, max_abs_diff(*g.r_vo, Matrix::identity(g.r_vo->rows())));
      if (g.alpha) dev = std::max(dev, std::abs(*g.alpha - 1.0));
    }
  }
  return dev;
}

namespace {

json matrix_to_json(const Matrix& m) { return json(std::vector<double>(m.data().begin(), m.data().end())); }

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw InvalidTransform(what + ": expected an array of numbers");
  std::vector<double> values;
  for (const json& v : j) {
    if (!v.is_number()) throw InvalidTransform(what + ": non-numeric entry");
    values.push_back(v.get<double>());
  }
  const auto n = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(values.size()))));
  if (n == 0 || n * n != values.size()) {
    throw InvalidTransform(what + ": " + std::to_string(values.size()) +
                           " entries is not a square matrix");
  }
  return Matrix(n, n, std::move(values));
}

}  // namespace

json transform_to_json(const SymmetryTransform& t) {
  json out = json::object();
  for (const auto& [li, lt] : t.layers) {
    if (lt.is_identity()) continue;
    json layer = json::object();
    if (lt.perm) layer["perm"] = *lt.perm;
    if (!std::all_of(lt.groups.begin(), lt.groups.end(),
                     [](const GroupTransform& g) { return g.is_identity(); })) {
      json groups = json::array();
      for (const GroupTransform& g : lt.groups) {
        json gj = json::object();
        if (g.r_qk) gj["r_qk"] = matrix_to_json(*g.r_qk);
        if (g.r_vo) gj["r_vo"] = matrix_to_json(*g.r_vo);
        if (g.alpha) gj["alpha"] = *g.alpha;
        groups.push_back(std::move(gj));
      }
      layer["groups"] = std::move(groups);
    }
    out[std::to_string(li)] = std::move(layer);
  }
  return out;
}

SymmetryTransform transform_from_json(const json& j) {
  if (!j.is_object()) throw InvalidTransform("transform JSON must be an object keyed by layer");
  SymmetryTransform t;
  for (const auto& [key, layer] : j.items()) {
    std::size_t li = 0;
    try {
      std::size_t used = 0;
      li = std::stoul(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw InvalidTransform("transform JSON: layer key '" + key + "' is not an index");
    }
    if (!layer.is_object()) throw InvalidTransform("transform JSON: layer " + key + " is not an object");
    LayerTransform lt;
    for (const auto& [field, value] : layer.items()) {
      if (field == "perm") {
        try {
          lt.perm = value.get<Permutation>();
        } catch (const json::exception&) {
          throw InvalidTransform("transform JSON: layer " + key + " perm must be an index array");
        }
      } else if (field == "groups") {
        if (!value.is_array()) throw InvalidTransform("transform JSON: layer " + key + " groups must be an array");
        for (std::size_t gi = 0; gi < value.size(); ++gi) {
          const json& gj = value[gi];
          const std::string w = "layer " + key + " group " + std::to_string(gi);
          if (!gj.is_object()) throw InvalidTransform("transform JSON: " + w + " is not an object");
          GroupTransform g;
          for (const auto& [gk, gv] : gj.items()) {
            if (gk == "r_qk") {
              g.r_qk = matrix_from_json(gv, w + " r_qk");
            } else if (gk == "r_vo") {
              g.r_vo = matrix_from_json(gv, w + " r_vo");
            } else if (gk == "alpha") {
              if (!gv.is_number()) throw InvalidTransform("transform JSON: " + w + " alpha must be a number");
              g.alpha = gv.get<double>();
            } else {
              throw InvalidTransform("transform JSON: " + w + " has unknown key '" + gk + "'");
            }
          }
          lt.groups.push_back(std::move(g));
        }
      } else {
        throw InvalidTransform("transform JSON: layer " + key + " has unknown key '" + field + "'");
      }
    }
    t.layers.emplace(li, std::move(lt));
  }
  return t;
}

}  // namespace symmerge
