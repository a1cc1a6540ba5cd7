// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/common.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

// Thin SVD of a d x k matrix: w = u * sigma.asDiagonal() * v_rows with
// p = min(d, k), u of shape d x p, v_rows of shape p x k. Singular values
// are non-increasing and non-negative; u has orthonormal columns and
// v_rows orthonormal rows. Signs are canonical: the largest-magnitude
// entry of each v_rows row is positive.
struct SvdResult {
  Matrix u;
  Vector sigma;
  Matrix v_rows;
};

// One-sided Jacobi (Hestenes) on cyclic column pairs. Sweeps until the
// largest off-diagonal Gram correlation drops below 1e-12, capped at 60
// sweeps; failure to converge raises NumericError.
SvdResult svd(const Matrix& w);

// Per-column Euclidean norms, returned as a k-vector.
Vector column_l2_norms(const Matrix& w);

// Cosine of the angle between two equal-length vectors. Conventions for
// degenerate inputs: both zero -> 1, exactly one zero -> 0. Result is
// clamped to [-1, 1].
double cosine_similarity(const Vector& a, const Vector& b);

double frobenius_norm(const Matrix& w);

// Product with an explicit inner-dimension check (throws ConfigError).
Matrix matmul(const Matrix& a, const Matrix& b);

// rows x cols matrix of independent N(0, std^2) draws, filled row by row;
// zero dimensions give an empty matrix without consuming draws.
Matrix gaussian_matrix(Rng& rng, Index rows, Index cols, double stddev);

}  // namespace fedlab
