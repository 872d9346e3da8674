// SPDX-License-Identifier: Apache-2.0
#include "symmerge/linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>

#include "symmerge/error.hpp"

namespace symmerge::linalg {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

void rotate_rows(Matrix& m, std::size_t i, std::size_t j, double c, double s) {
  auto ri = m.row(i);
  auto rj = m.row(j);
  for (std::size_t k = 0; k < ri.size(); ++k) {
    const double a = ri[k];
    const double b = rj[k];
    ri[k] = c * a - s * b;
    rj[k] = s * a + c * b;
  }
}

// Orthonormalizes `v` against rows [0, count) of `basis`; returns the norm left over.
double orthogonalize_against(std::span<double> v, const Matrix& basis, std::size_t count) {
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t r = 0; r < count; ++r) {
      auto b = basis.row(r);
      const double proj = dot(v, b);
      for (std::size_t k = 0; k < v.size(); ++k) v[k] -= proj * b[k];
    }
  }
  const double norm = std::sqrt(dot(v, v));
  if (norm > 0.0)
    for (double& x : v) x /= norm;
  return norm;
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) throw InvalidInput("svd: empty matrix " + m.shape_string());
  if (!m.all_finite()) throw InvalidInput("svd: non-finite entry in " + m.shape_string() + " input");

  const bool transposed = m.rows() < m.cols();
  // Row i of `cols` is column i of the tall working matrix A (p x q, p >= q).
  Matrix cols = transposed ? m : m.transposed();
  const std::size_t q = cols.rows();
  const std::size_t p = cols.cols();
  Matrix v_rows = Matrix::identity(q);  // row i = column i of V

  bool converged = false;
  for (int sweep = 0; sweep < kSvdMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t i = 0; i + 1 < q; ++i) {
      for (std::size_t j = i + 1; j < q; ++j) {
        const double alpha = dot(cols.row(i), cols.row(i));
        const double beta = dot(cols.row(j), cols.row(j));
        const double gamma = dot(cols.row(i), cols.row(j));
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kSvdTolerance * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_rows(cols, i, j, c, s);
        rotate_rows(v_rows, i, j, c, s);
      }
    }
  }
  if (!converged) {
    throw NumericalFailure("svd: one-sided Jacobi did not converge within " +
                           std::to_string(kSvdMaxSweeps) + " sweeps for " + m.shape_string() +
                           " matrix");
  }

  std::vector<double> sigma(q);
  for (std::size_t i = 0; i < q; ++i) sigma[i] = std::sqrt(dot(cols.row(i), cols.row(i)));
  std::vector<std::size_t> order(q);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  const double sigma_max = sigma[order[0]];
  const double negligible = sigma_max * static_cast<double>(p) * std::numeric_limits<double>::epsilon();

  // Left vectors stored as rows (k x p) while building; zero directions completed.
  Matrix left(q, p);
  Matrix right(q, q);
  std::vector<double> sorted(q);
  std::vector<std::size_t> deficient;
  for (std::size_t r = 0; r < q; ++r) {
    const std::size_t src = order[r];
    sorted[r] = sigma[src];
    auto vr = v_rows.row(src);
    std::copy(vr.begin(), vr.end(), right.row(r).begin());
    if (sigma[src] > negligible && sigma[src] > 0.0) {
      auto cr = cols.row(src);
      auto lr = left.row(r);
      for (std::size_t k = 0; k < p; ++k) lr[k] = cr[k] / sigma[src];
    } else {
      deficient.push_back(r);
    }
  }
  if (!deficient.empty()) {
    // Complete the rank-deficient directions from the standard basis.
    Matrix basis(q, p);
    std::size_t count = 0;
    for (std::size_t r = 0; r < q; ++r) {
      if (std::find(deficient.begin(), deficient.end(), r) != deficient.end()) continue;
      basis.set_row_block(count++, left.row_block(r, 1));
    }
    std::size_t candidate = 0;
    for (std::size_t r : deficient) {
      std::vector<double> v(p);
      for (;;) {
        if (candidate >= p) throw NumericalFailure("svd: could not complete left basis");
        std::fill(v.begin(), v.end(), 0.0);
        v[candidate++] = 1.0;
        if (orthogonalize_against(v, basis, count) > 1e-6) break;
      }
      std::copy(v.begin(), v.end(), left.row(r).begin());
      std::copy(v.begin(), v.end(), basis.row(count++).begin());
    }
  }

  SvdResult out;
  out.singular_values = std::move(sorted);
  if (!transposed) {
    out.u = left.transposed();  // p x q
    out.vt = std::move(right);  // q x q
  } else {
    // m = A^T = V S U^T
    out.u = right.transposed();  // q x q
    out.vt = std::move(left);    // q x p
  }
  return out;
}

std::vector<std::size_t> solve_linear_assignment_max(const Matrix& similarity) {
  if (similarity.rows() != similarity.cols()) {
    throw InvalidInput("solve_linear_assignment_max: matrix must be square, got " +
                       similarity.shape_string());
  }
  if (!similarity.all_finite()) {
    throw InvalidInput("solve_linear_assignment_max: non-finite similarity entry");
  }
  const std::size_t n = similarity.rows();
  if (n == 0) return {};

  // Shortest augmenting path with potentials on cost = -similarity, 1-based
  // with column 0 as the virtual source.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -similarity(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> perm(n);
  for (std::size_t j = 1; j <= n; ++j) perm[match[j] - 1] = j - 1;

  // Never return something worse than leaving the rows in place.
  std::vector<std::size_t> ident(n);
  std::iota(ident.begin(), ident.end(), 0);
  if (assignment_score(similarity, perm) < assignment_score(similarity, ident)) return ident;
  return perm;
}

double assignment_score(const Matrix& similarity, const std::vector<std::size_t>& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += similarity(i, p[i]);
  return s;
}

double quartic_residual_bound(const QuarticCoeffs& c) {
  return 1e-8 * std::max(1.0, std::abs(c.a0));
}

namespace {

using cplx = std::complex<double>;

// Largest real root of the monic cubic x^3 + a x^2 + b x + c via Cardano,
// polished by Newton.
double largest_real_cubic_root(double a, double b, double c) {
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  const cplx disc = cplx(q * q / 4.0 + p * p * p / 27.0, 0.0);
  const cplx sq = std::sqrt(disc);
  cplx u = std::pow(-q / 2.0 + sq, 1.0 / 3.0);
  if (std::abs(u) < 1e-300) u = std::pow(-q / 2.0 - sq, 1.0 / 3.0);
  const cplx omega(-0.5, std::sqrt(3.0) / 2.0);
  double best = -std::numeric_limits<double>::infinity();
  cplx uk = u;
  for (int k = 0; k < 3; ++k) {
    const cplx t = std::abs(uk) < 1e-300 ? cplx(0.0) : uk - p / (3.0 * uk);
    best = std::max(best, t.real() - a / 3.0);
    uk *= omega;
  }
  auto f = [&](double x) { return ((x + a) * x + b) * x + c; };
  auto df = [&](double x) { return (3.0 * x + 2.0 * a) * x + b; };
  for (int it = 0; it < 50; ++it) {
    const double d = df(best);
    if (d == 0.0) break;
    const double step = f(best) / d;
    best -= step;
    if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(best))) break;
  }
  return best;
}

std::array<cplx, 2> quadratic_roots(cplx b, cplx c) {
  // x^2 + b x + c, stable form.
  const cplx disc = std::sqrt(b * b - 4.0 * c);
  const cplx s = (std::real(std::conj(b) * disc) >= 0.0) ? disc : -disc;
  const cplx q = -0.5 * (b + s);
  if (std::abs(q) == 0.0) return {cplx(0.0), cplx(0.0)};
  return {q, c / q};
}

// Roots of y^4 + p y^2 + q y + r (Ferrari).
std::array<cplx, 4> depressed_quartic_roots(double p, double q, double r) {
  const double scale = std::max({1.0, std::abs(p), std::sqrt(std::abs(r))});
  if (std::abs(q) <= 1e-14 * scale * std::sqrt(scale)) {
    auto z = quadratic_roots(cplx(p), cplx(r));
    const cplx y0 = std::sqrt(z[0]);
    const cplx y1 = std::sqrt(z[1]);
    return {y0, -y0, y1, -y1};
  }
  // Resolvent: 8m^3 + 8p m^2 + (2p^2 - 8r) m - q^2 = 0 has a positive root.
  double m = largest_real_cubic_root(p, (p * p) / 4.0 - r, -(q * q) / 8.0);
  if (!(m > 0.0)) m = std::numeric_limits<double>::min();
  const double s = std::sqrt(2.0 * m);
  const double k = q / (2.0 * s);
  auto z1 = quadratic_roots(cplx(-s), cplx(p / 2.0 + m + k));
  auto z2 = quadratic_roots(cplx(s), cplx(p / 2.0 + m - k));
  return {z1[0], z1[1], z2[0], z2[1]};
}

double polish(const QuarticCoeffs& c, double x) {
  double best_x = x;
  double best_r = std::abs(c(x));
  for (int it = 0; it < kQuarticNewtonIterations && best_r > 0.0; ++it) {
    const double d = c.derivative(x);
    if (d == 0.0 || !std::isfinite(d)) break;
    const double next = x - c(x) / d;
    if (!std::isfinite(next)) break;
    const double r = std::abs(c(next));
    if (r < best_r) {
      best_r = r;
      best_x = next;
    }
    if (next == x) break;
    x = next;
  }
  return best_x;
}

}  // namespace

std::vector<double> real_quartic_roots(const QuarticCoeffs& c) {
  if (!std::isfinite(c.a4) || !std::isfinite(c.a3) || !std::isfinite(c.a1) ||
      !std::isfinite(c.a0)) {
    throw InvalidInput("real_quartic_roots: non-finite coefficient");
  }
  if (!(c.a4 > 0.0)) {
    throw NumericalFailure("real_quartic_roots: degenerate polynomial, leading coefficient a4 = " +
                           std::to_string(c.a4) + " must be positive");
  }
  const double b = c.a3 / c.a4;
  const double d = c.a1 / c.a4;
  const double e = c.a0 / c.a4;
  // x = y - b/4
  const double shift = b / 4.0;
  const double p = -3.0 * b * b / 8.0;
  const double q = b * b * b / 8.0 + d;
  const double r = -3.0 * b * b * b * b / 256.0 - b * d / 4.0 + e;

  const double bound = quartic_residual_bound(c);
  std::vector<double> roots;
  for (const cplx& y : depressed_quartic_roots(p, q, r)) {
    const cplx x = y - shift;
    if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) continue;
    if (std::abs(x.imag()) > 1e-9 * (1.0 + std::abs(x.real()))) continue;
    const double root = polish(c, x.real());
    if (std::abs(c(root)) <= bound) roots.push_back(root);
  }
  std::sort(roots.begin(), roots.end());
  std::vector<double> merged;
  for (double x : roots) {
    if (merged.empty() || std::abs(x - merged.back()) > 1e-10) merged.push_back(x);
  }

  if (c.a0 < 0.0 &&
      std::none_of(merged.begin(), merged.end(), [](double x) { return x > 0.0; })) {
    throw NumericalFailure(
        "real_quartic_roots: lost the guaranteed positive root (p(0) < 0 < p(+inf))");
  }
  return merged;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  Matrix g = rng.gaussian(n, n);
  // Orthonormalize the columns of g; work on rows of g^T.
  Matrix rows = g.transposed();
  Matrix q(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> v(rows.row(i).begin(), rows.row(i).end());
    if (orthogonalize_against(v, q, i) == 0.0)
      throw NumericalFailure("random_orthogonal: rank-deficient Gaussian draw");
    std::copy(v.begin(), v.end(), q.row(i).begin());
  }
  return q.transposed();
}

}  // namespace symmerge::linalg
