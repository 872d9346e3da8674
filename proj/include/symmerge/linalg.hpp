// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels behind the alignment solvers: thin SVD (one-sided Jacobi),
// maximum-weight linear assignment (Hungarian / shortest augmenting path) and
// real roots of the depressed-quadratic-term quartic that arises from the
// query/key scale objective.
#pragma once

#include <cstddef>
#include <vector>

#include "symmerge/matrix.hpp"
#include "symmerge/random.hpp"

namespace symmerge::linalg {

struct SvdResult {
  Matrix u;                            // m x k, orthonormal columns
  std::vector<double> singular_values;  // k, descending, non-negative
  Matrix vt;                           // k x n, orthonormal rows
};

inline constexpr int kSvdMaxSweeps = 100;
inline constexpr double kSvdTolerance = 1e-12;

// Thin SVD, k = min(rows, cols). Columns of u belonging to zero singular
// values are completed to an orthonormal set, so u * vt is always orthogonal
// for square input.
SvdResult svd(const Matrix& m);

// Permutation p (row i -> column p[i]) maximizing sum_i similarity(i, p[i]).
// Deterministic: among equal-cost augmenting choices the lowest index wins.
std::vector<std::size_t> solve_linear_assignment_max(const Matrix& similarity);

// sum_i similarity(i, p[i]), accumulated in row order.
double assignment_score(const Matrix& similarity, const std::vector<std::size_t>& p);

// a4 x^4 + a3 x^3 + a1 x + a0 (no quadratic term).
struct QuarticCoeffs {
  double a4 = 0.0;
  double a3 = 0.0;
  double a1 = 0.0;
  double a0 = 0.0;

  double operator()(double x) const { return ((a4 * x + a3) * x * x + a1) * x + a0; }
  double derivative(double x) const { return (4.0 * a4 * x + 3.0 * a3) * x * x + a1; }
};

inline constexpr int kQuarticNewtonIterations = 20;

// Residual tolerance a returned root satisfies: |p(x)| <= this.
double quartic_residual_bound(const QuarticCoeffs& c);

// All real roots in ascending order, duplicates within 1e-10 merged.
// Closed-form (Ferrari) candidates are Newton-polished on the real line.
std::vector<double> real_quartic_roots(const QuarticCoeffs& c);

// Orthonormal n x n matrix from QR (Gram-Schmidt, two passes) of a seeded
// Gaussian, with the sign convention diag(R) > 0 so the draw is Haar.
Matrix random_orthogonal(std::size_t n, Rng& rng);

}  // namespace symmerge::linalg
