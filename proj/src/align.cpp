// SPDX-License-Identifier: Apache-2.0
#include "symmerge/align.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <sstream>
#include <thread>

#include "symmerge/error.hpp"

namespace symmerge {

using nlohmann::json;

std::string mode_name(AlignmentMode mode) {
  return mode == AlignmentMode::kWeights ? "weights" : "activations";
}

AlignmentMode parse_mode(const std::string& name) {
  if (name == "weights") return AlignmentMode::kWeights;
  if (name == "activations") return AlignmentMode::kActivations;
  throw InvalidInput("unknown alignment mode '" + name + "' (expected weights or activations)");
}

SymmetrySet SymmetrySet::parse(const std::string& text) {
  SymmetrySet s{false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "perm") {
      s.permutation = true;
    } else if (item == "rot") {
      s.rotation = true;
    } else if (item == "scale") {
      s.scale = true;
    } else {
      throw InvalidInput("unknown symmetry '" + item + "' (expected perm, rot, scale)");
    }
  }
  if (!s.any()) throw InvalidInput("at least one symmetry must be enabled");
  return s;
}

std::string SymmetrySet::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  add(permutation, "perm");
  add(rotation, "rot");
  add(scale, "scale");
  return out;
}

// --- FFN -------------------------------------------------------------------

Matrix ffn_similarity(const LayerWeights& l1, const LayerWeights& l2) {
  Matrix s = matmul_nt(l1.w_gate, l2.w_gate);
  s += matmul_nt(l1.w_up, l2.w_up);
  s += matmul_tn(l1.w_down, l2.w_down);
  return s;
}

double ffn_squared_distance(const LayerWeights& l1, const LayerWeights& l2, const Permutation& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t c = 0; c < l1.w_gate.cols(); ++c) {
      const double dg = l1.w_gate(i, c) - l2.w_gate(p[i], c);
      const double du = l1.w_up(i, c) - l2.w_up(p[i], c);
      total += dg * dg + du * du;
    }
    for (std::size_t r = 0; r < l1.w_down.rows(); ++r) {
      const double dd = l1.w_down(r, i) - l2.w_down(r, p[i]);
      total += dd * dd;
    }
  }
  return total;
}

Permutation align_ffn_weights(const LayerWeights& l1, const LayerWeights& l2) {
  if (l1.w_gate.rows() != l2.w_gate.rows() || l1.w_gate.cols() != l2.w_gate.cols() ||
      l1.w_up.rows() != l2.w_up.rows() || l1.w_up.cols() != l2.w_up.cols() ||
      l1.w_down.rows() != l2.w_down.rows() || l1.w_down.cols() != l2.w_down.cols() ||
      l1.w_gate.rows() != l1.w_down.cols()) {
    throw InvalidInput("align_ffn_weights: FFN shapes do not match");
  }
  return linalg::solve_linear_assignment_max(ffn_similarity(l1, l2));
}

// --- Rotations -------------------------------------------------------------

namespace {

double trace(const Matrix& m) {
  double t = 0.0;
  for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) t += m(i, i);
  return t;
}

void require_same_group_shape(const AttentionGroup& a, const AttentionGroup& b, const char* who) {
  auto same = [](const Matrix& x, const Matrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols();
  };
  bool ok = a.q.size() == b.q.size() && a.o.size() == b.o.size() && same(a.k, b.k) &&
            same(a.v, b.v);
  for (std::size_t i = 0; ok && i < a.q.size(); ++i) ok = same(a.q[i], b.q[i]);
  for (std::size_t i = 0; ok && i < a.o.size(); ++i) ok = same(a.o[i], b.o[i]);
  if (!ok) throw InvalidInput(std::string(who) + ": group blocks differ in shape");
}

}  // namespace

ProcrustesSolution procrustes(const Matrix& m) {
  if (m.rows() != m.cols()) throw InvalidInput("procrustes: cross matrix must be square");
  ProcrustesSolution sol;
  sol.objective_before = trace(m);
  const linalg::SvdResult s = linalg::svd(m);
  sol.singular_values = s.singular_values;
  if (s.singular_values.front() < kDegenerateSingularValue) {
    sol.degenerate = true;
    sol.rotation = Matrix::identity(m.rows());
  } else {
    sol.rotation = matmul(s.u, s.vt);
  }
  sol.objective_after = inner(sol.rotation, m);
  return sol;
}

Matrix qk_cross_matrix(const AttentionGroup& g1, const AttentionGroup& g2) {
  require_same_group_shape(g1, g2, "qk_cross_matrix");
  Matrix m = matmul_nt(g1.k, g2.k);
  for (std::size_t i = 0; i < g1.q.size(); ++i) m += matmul_nt(g1.q[i], g2.q[i]);
  return m;
}

Matrix vo_cross_matrix(const AttentionGroup& g1, const AttentionGroup& g2) {
  require_same_group_shape(g1, g2, "vo_cross_matrix");
  Matrix m = matmul_nt(g1.v, g2.v);
  for (std::size_t i = 0; i < g1.o.size(); ++i) m += matmul_tn(g1.o[i], g2.o[i]);
  return m;
}

ProcrustesSolution align_qk_rotation(const AttentionGroup& g1, const AttentionGroup& g2) {
  return procrustes(qk_cross_matrix(g1, g2));
}

ProcrustesSolution align_vo_rotation(const AttentionGroup& g1, const AttentionGroup& g2) {
  return procrustes(vo_cross_matrix(g1, g2));
}

// --- Scale -----------------------------------------------------------------

double ScaleStatistics::objective(double alpha) const {
  return q1_sq - 2.0 * alpha * q_cross + alpha * alpha * q2_sq + k1_sq - 2.0 * k_cross / alpha +
         k2_sq / (alpha * alpha);
}

linalg::QuarticCoeffs ScaleStatistics::quartic() const {
  return {q2_sq, -q_cross, k_cross, -k2_sq};
}

ScaleStatistics scale_statistics(const AttentionGroup& g1, const AttentionGroup& g2) {
  if (g1.q.size() != g2.q.size()) throw InvalidInput("scale_statistics: group sizes differ");
  ScaleStatistics s;
  for (std::size_t i = 0; i < g1.q.size(); ++i) {
    s.q1_sq += squared_norm(g1.q[i]);
    s.q_cross += inner(g1.q[i], g2.q[i]);
    s.q2_sq += squared_norm(g2.q[i]);
  }
  s.k1_sq = squared_norm(g1.k);
  s.k_cross = inner(g1.k, g2.k);
  s.k2_sq = squared_norm(g2.k);
  return s;
}

ScaleSolution solve_scale(const ScaleStatistics& stats) {
  ScaleSolution sol;
  sol.objective_before = stats.objective(1.0);
  sol.objective_after = sol.objective_before;
  constexpr double kZeroNorm = 1e-24;
  if (stats.k2_sq <= kZeroNorm || stats.q2_sq <= kZeroNorm) {
    sol.degenerate = true;
    return sol;
  }
  sol.roots = linalg::real_quartic_roots(stats.quartic());

  bool found = false;
  double best_alpha = 1.0;
  double best_value = 0.0;
  for (double a : sol.roots) {
    if (a == 0.0) continue;
    const double value = stats.objective(a);
    if (!std::isfinite(value)) continue;
    if (!found) {
      found = true;
      best_alpha = a;
      best_value = value;
      continue;
    }
    const double tie = 1e-12 * (1.0 + std::abs(best_value));
    if (value < best_value - tie) {
      best_alpha = a;
      best_value = value;
    } else if (std::abs(value - best_value) <= tie) {
      const bool pos = a > 0.0;
      const bool best_pos = best_alpha > 0.0;
      if ((pos && !best_pos) ||
          (pos == best_pos && std::abs(a - 1.0) < std::abs(best_alpha - 1.0))) {
        best_alpha = a;
        best_value = value;
      }
    }
  }
  if (!found) {
    throw NumericalFailure("solve_scale: quartic has no real non-zero root");
  }
  if (best_value <= sol.objective_before) {
    sol.alpha = best_alpha;
    sol.objective_after = best_value;
  }
  return sol;
}

ScaleSolution align_qk_scale(const AttentionGroup& g1, const AttentionGroup& g2_rotated) {
  return solve_scale(scale_statistics(g1, g2_rotated));
}

// --- Whole model -----------------------------------------------------------

double BlockDistances::qk() const { return std::sqrt(wq * wq + wk * wk); }
double BlockDistances::vo() const { return std::sqrt(wv * wv + wo * wo); }

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SYMMERGE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

namespace {

double sum_sq_distance(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = frobenius_norm(a[i] - b[i]);
    s += d * d;
  }
  return s;
}

BlockDistances group_distances(const AttentionGroup& g1, const AttentionGroup& g2) {
  BlockDistances d;
  d.wq = std::sqrt(sum_sq_distance(g1.q, g2.q));
  d.wk = frobenius_norm(g1.k - g2.k);
  d.wv = frobenius_norm(g1.v - g2.v);
  d.wo = std::sqrt(sum_sq_distance(g1.o, g2.o));
  return d;
}

double layer_squared_distance(const LayerWeights& a, const LayerWeights& b) {
  double s = 0.0;
  for (Matrix LayerWeights::*member :
       {&LayerWeights::wq, &LayerWeights::wk, &LayerWeights::wv, &LayerWeights::wo,
        &LayerWeights::w_gate, &LayerWeights::w_up, &LayerWeights::w_down}) {
    s += squared_norm(a.*member - b.*member);
  }
  return s;
}

// Activation matrices (tokens x head_dim) transposed into weight-shaped
// blocks so the weight solvers apply unchanged: with A = X W^T the update
// W -> R W maps A^T -> R A^T.
AttentionGroup activation_group(const GroupActivations& acts) {
  AttentionGroup g;
  for (const Matrix& q : acts.q) g.q.push_back(q.transposed());
  g.k = acts.k.transposed();
  g.v = acts.v.transposed();
  return g;
}

bool near_identity(const Matrix& r) {
  return max_abs_diff(r, Matrix::identity(r.rows())) <= kIdentitySnapTolerance;
}

struct LayerInputs {
  const LayerWeights* w1 = nullptr;
  const LayerWeights* w2 = nullptr;
  const LayerActivations* a1 = nullptr;  // activations mode only
  const LayerActivations* a2 = nullptr;
};

std::pair<LayerTransform, LayerReport> align_layer(std::size_t li, const LayerInputs& in,
                                                   const GqaLayout& layout,
                                                   const AlignmentOptions& opts) {
  const bool by_acts = opts.mode == AlignmentMode::kActivations;
  LayerTransform lt;
  LayerReport rep;
  rep.layer = li;
  LayerWeights l2 = *in.w2;

  rep.ffn.enabled = opts.symmetries.permutation;
  const double ffn_before =
      std::sqrt(squared_norm(in.w1->w_gate - l2.w_gate) + squared_norm(in.w1->w_up - l2.w_up) +
                squared_norm(in.w1->w_down - l2.w_down));
  if (opts.symmetries.permutation) {
    const Matrix sim = by_acts ? matmul_tn(in.a1->ffn_hidden, in.a2->ffn_hidden)
                               : ffn_similarity(*in.w1, l2);
    const Permutation perm = linalg::solve_linear_assignment_max(sim);
    Permutation ident(perm.size());
    for (std::size_t i = 0; i < ident.size(); ++i) ident[i] = i;
    rep.ffn.score_before = linalg::assignment_score(sim, ident);
    rep.ffn.score_after = linalg::assignment_score(sim, perm);
    for (std::size_t i = 0; i < perm.size(); ++i) rep.ffn.moved += perm[i] != i ? 1 : 0;
    if (rep.ffn.moved > 0) {
      lt.perm = perm;
      LayerTransform only_perm;
      only_perm.perm = perm;
      apply_layer_transform(l2, only_perm, layout);
    }
  }
  rep.ffn.distance_before = ffn_before;
  rep.ffn.distance_after =
      std::sqrt(squared_norm(in.w1->w_gate - l2.w_gate) + squared_norm(in.w1->w_up - l2.w_up) +
                squared_norm(in.w1->w_down - l2.w_down));

  for (std::size_t j = 0; j < layout.groups.size(); ++j) {
    GroupReport gr;
    gr.group = j;
    GroupTransform gt;
    const AttentionGroup w1g = extract_group(*in.w1, layout, j);
    const AttentionGroup w2g = extract_group(l2, layout, j);
    gr.before = group_distances(w1g, w2g);

    AttentionGroup src1 = by_acts ? activation_group(in.a1->groups[j]) : w1g;
    AttentionGroup src2 = by_acts ? activation_group(in.a2->groups[j]) : w2g;

    const bool rotate = opts.symmetries.rotation;
    const bool scale = opts.symmetries.scale;
    if (rotate) {
      ProcrustesSolution vo = align_vo_rotation(src1, src2);
      const Matrix m_vo = vo_cross_matrix(src1, src2);
      if (vo.degenerate) {
        rep.warnings.push_back("group " + std::to_string(j) +
                               " vo: degenerate cross matrix, rotation left at identity");
      }
      if (near_identity(vo.rotation) || inner(vo.rotation, m_vo) < vo.objective_before) {
        vo.rotation = Matrix::identity(vo.rotation.rows());
      }
      gr.vo = {true, vo.objective_before, inner(vo.rotation, m_vo), true};
      if (!near_identity(vo.rotation)) {
        gr.vo.identity = false;
        gt.r_vo = std::move(vo.rotation);
      }
    }

    if (rotate || scale) {
      // The QK rotation is solved first, then the scale on the rotated
      // blocks. With both enabled the two steps alternate until neither
      // moves, so re-aligning an aligned pair returns the identity.
      Matrix mq(layout.head_dim, layout.head_dim);
      for (std::size_t k = 0; k < src1.q.size(); ++k) mq += matmul_nt(src1.q[k], src2.q[k]);
      const Matrix mk = matmul_nt(src1.k, src2.k);
      const ScaleStatistics base = scale_statistics(src1, src2);
      auto cross_at = [&](double alpha) {
        Matrix m = mq;
        m *= alpha;
        Matrix k = mk;
        k *= 1.0 / alpha;
        return m += k;
      };
      auto stats_at = [&](const Matrix& r) {
        ScaleStatistics st = base;
        st.q_cross = inner(r, mq);
        st.k_cross = inner(r, mk);
        return st;
      };

      Matrix r = Matrix::identity(layout.head_dim);
      double alpha = 1.0;
      ProcrustesSolution qk;
      ScaleSolution sc;
      for (int it = 0; it < kMaxQkRefinements; ++it) {
        Matrix r_next = r;
        double alpha_next = alpha;
        if (rotate) {
          qk = procrustes(cross_at(alpha));
          r_next = qk.rotation;
        }
        if (scale) {
          sc = solve_scale(stats_at(r_next));
          alpha_next = sc.alpha;
        }
        const bool settled = max_abs_diff(r_next, r) <= kQkRefinementTolerance &&
                             std::abs(alpha_next - alpha) <= kQkRefinementTolerance * std::abs(alpha);
        r = std::move(r_next);
        alpha = alpha_next;
        if (!(rotate && scale) || settled) break;
      }

      if (rotate && qk.degenerate) {
        rep.warnings.push_back("group " + std::to_string(j) +
                               " qk: degenerate cross matrix, rotation left at identity");
      }
      if (scale && sc.degenerate) {
        rep.warnings.push_back("group " + std::to_string(j) +
                               " scale: zero-norm query or key block, alpha left at 1");
      }
      if (std::abs(alpha - 1.0) <= kIdentitySnapTolerance) alpha = 1.0;
      const Matrix m_qk = cross_at(alpha);
      if (near_identity(r) || inner(r, m_qk) < trace(m_qk)) r = Matrix::identity(layout.head_dim);

      if (rotate) {
        gr.qk = {true, trace(m_qk), inner(r, m_qk), true};
        if (!near_identity(r)) {
          gr.qk.identity = false;
          gt.r_qk = r;
        }
      }
      if (scale) {
        const ScaleStatistics st = stats_at(r);
        gr.scale.enabled = true;
        gr.scale.roots = sc.roots;
        gr.scale.alpha = alpha;
        gr.scale.objective_before = st.objective(1.0);
        gr.scale.objective_after = st.objective(alpha);
        if (alpha != 1.0) gt.alpha = alpha;
      }
    }

    lt.groups.push_back(std::move(gt));
    rep.groups.push_back(std::move(gr));
  }
  if (std::all_of(lt.groups.begin(), lt.groups.end(),
                  [](const GroupTransform& g) { return g.is_identity(); })) {
    lt.groups.clear();
  }

  LayerWeights aligned = *in.w2;
  apply_layer_transform(aligned, lt, layout);
  for (GroupReport& gr : rep.groups) {
    gr.after = group_distances(extract_group(*in.w1, layout, gr.group),
                               extract_group(aligned, layout, gr.group));
  }
  return {std::move(lt), std::move(rep)};
}

}  // namespace

AlignmentResult align_models(const ModelWeights& w1, const ModelWeights& w2,
                             const AlignmentOptions& opts) {
  require_same_config(w1.config, w2.config, "align_models");
  w1.validate();
  w2.validate();
  if (!opts.symmetries.any()) throw InvalidInput("align_models: no symmetry enabled");
  const bool by_acts = opts.mode == AlignmentMode::kActivations;
  if (by_acts && opts.batches.empty()) {
    throw InvalidInput("align_models: activation mode needs at least one token batch");
  }

  const ModelConfig& c = w1.config;
  const GqaLayout layout = GqaLayout::from_config(c);
  AlignmentResult result;
  AlignmentReport& report = result.report;
  report.mode = opts.mode;
  report.symmetries = opts.symmetries;

  ActivationTrace t1, t2;
  if (by_acts) {
    t1 = capture_activations(w1, opts.batches);
    t2 = capture_activations(w2, opts.batches);
    report.tokens = t1.tokens;
    if (t1.tokens < c.head_dim) {
      report.warnings.push_back("only " + std::to_string(t1.tokens) +
                                " tokens for head_dim " + std::to_string(c.head_dim) +
                                ": activation cross-covariances are rank-deficient");
    }
    if (t1.tokens < c.ffn_dim && opts.symmetries.permutation) {
      report.warnings.push_back("only " + std::to_string(t1.tokens) + " tokens for ffn_dim " +
                                std::to_string(c.ffn_dim) +
                                ": FFN similarity is rank-deficient");
    }
  }
  if (c.rope_enabled && opts.symmetries.rotation) {
    report.warnings.push_back(
        "rotary embedding enabled: QK rotations are not exactly function-preserving");
  }

  std::vector<std::pair<LayerTransform, LayerReport>> per_layer(c.n_layers);
  std::vector<std::exception_ptr> errors(c.n_layers);
  const std::size_t workers = worker_count(c.n_layers);
  auto work = [&](std::size_t first) {
    for (std::size_t li = first; li < c.n_layers; li += workers) {
      try {
        LayerInputs in{&w1.layers[li], &w2.layers[li], nullptr, nullptr};
        if (by_acts) {
          in.a1 = &t1.layers[li];
          in.a2 = &t2.layers[li];
        }
        per_layer[li] = align_layer(li, in, layout, opts);
      } catch (...) {
        errors[li] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work, i);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  double before = 0.0;
  double after = 0.0;
  for (std::size_t li = 0; li < c.n_layers; ++li) {
    auto& [lt, rep] = per_layer[li];
    before += layer_squared_distance(w1.layers[li], w2.layers[li]);
    LayerWeights aligned = w2.layers[li];
    apply_layer_transform(aligned, lt, layout);
    after += layer_squared_distance(w1.layers[li], aligned);
    if (!lt.is_identity()) result.transform.layers.emplace(li, std::move(lt));
    report.layers.push_back(std::move(rep));
  }
  report.total_distance_before = std::sqrt(before);
  report.total_distance_after = std::sqrt(after);
  return result;
}

AlignmentResult align_models_by_activation(const ModelWeights& w1, const ModelWeights& w2,
                                           const std::vector<TokenSequence>& batches,
                                           AlignmentOptions opts) {
  opts.mode = AlignmentMode::kActivations;
  opts.batches = batches;
  return align_models(w1, w2, opts);
}

// --- Reporting -------------------------------------------------------------

namespace {

json distances_json(const BlockDistances& d) {
  return {{"wq", d.wq}, {"wk", d.wk}, {"wv", d.wv}, {"wo", d.wo}};
}

json rotation_json(const RotationReport& r) {
  return {{"enabled", r.enabled},
          {"identity", r.identity},
          {"objective_before", r.objective_before},
          {"objective_after", r.objective_after}};
}

}  // namespace

json report_to_json(const AlignmentReport& report) {
  json layers = json::array();
  for (const LayerReport& l : report.layers) {
    json groups = json::array();
    for (const GroupReport& g : l.groups) {
      groups.push_back({{"group", g.group},
                        {"qk_rotation", rotation_json(g.qk)},
                        {"vo_rotation", rotation_json(g.vo)},
                        {"scale",
                         {{"enabled", g.scale.enabled},
                          {"alpha", g.scale.alpha},
                          {"roots", g.scale.roots},
                          {"objective_before", g.scale.objective_before},
                          {"objective_after", g.scale.objective_after}}},
                        {"distance_before", distances_json(g.before)},
                        {"distance_after", distances_json(g.after)}});
    }
    layers.push_back({{"layer", l.layer},
                      {"ffn",
                       {{"enabled", l.ffn.enabled},
                        {"score_before", l.ffn.score_before},
                        {"score_after", l.ffn.score_after},
                        {"moved", l.ffn.moved},
                        {"distance_before", l.ffn.distance_before},
                        {"distance_after", l.ffn.distance_after}}},
                      {"groups", std::move(groups)},
                      {"warnings", l.warnings}});
  }
  return {{"mode", mode_name(report.mode)},
          {"symmetries", report.symmetries.to_string()},
          {"tokens", report.tokens},
          {"total_distance_before", report.total_distance_before},
          {"total_distance_after", report.total_distance_after},
          {"warnings", report.warnings},
          {"layers", std::move(layers)}};
}

std::string report_to_text(const AlignmentReport& report) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "alignment mode=" << mode_name(report.mode)
     << " symmetries=" << report.symmetries.to_string();
  if (report.mode == AlignmentMode::kActivations) os << " tokens=" << report.tokens;
  os << "\n";
  os << "total distance: " << report.total_distance_before << " -> "
     << report.total_distance_after << "\n";
  for (const std::string& w : report.warnings) os << "warning: " << w << "\n";
  for (const LayerReport& l : report.layers) {
    os << "layer " << l.layer << "\n";
    if (l.ffn.enabled) {
      os << "  ffn   score " << l.ffn.score_before << " -> " << l.ffn.score_after << "  moved "
         << l.ffn.moved << "  dist " << l.ffn.distance_before << " -> " << l.ffn.distance_after
         << "\n";
    }
    for (const GroupReport& g : l.groups) {
      os << "  group " << g.group;
      if (g.qk.enabled) {
        os << "  qk <R,M> " << g.qk.objective_before << " -> " << g.qk.objective_after;
        os << "  vo <R,M> " << g.vo.objective_before << " -> " << g.vo.objective_after;
      }
      if (g.scale.enabled) os << "  alpha " << g.scale.alpha;
      os << "  dist qk " << g.before.qk() << " -> " << g.after.qk() << "  vo " << g.before.vo()
         << " -> " << g.after.vo() << "\n";
    }
    for (const std::string& w : l.warnings) os << "  warning: " << w << "\n";
  }
  return os.str();
}

}  // namespace symmerge
