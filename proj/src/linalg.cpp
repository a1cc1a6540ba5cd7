// SPDX-License-Identifier: Apache-2.0
#include "fedlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

namespace fedlab {

namespace {

constexpr double kJacobiTol = 1e-12;
constexpr int kMaxSweeps = 60;

struct TallSvd {
  Matrix u;
  Vector sigma;
  Matrix v;  // k x k, original = u * sigma.asDiagonal() * v.transpose()
};

// Hestenes one-sided Jacobi for rows >= cols. Right rotations orthogonalize
// the columns in place; the same rotations accumulate into v. A sweep that
// finds every column pair with |correlation| <= tol terminates the loop.
TallSvd jacobi_tall(Matrix a) {
  const Index m = a.rows();
  const Index n = a.cols();
  Matrix v = Matrix::Identity(n, n);
  bool converged = n <= 1;
  double worst = 0.0;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    worst = 0.0;
    for (Index p = 0; p + 1 < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double app = a.col(p).squaredNorm();
        const double aqq = a.col(q).squaredNorm();
        const double apq = a.col(p).dot(a.col(q));
        if (app == 0.0 || aqq == 0.0 || apq == 0.0) continue;
        const double corr = std::abs(apq) / std::sqrt(app * aqq);
        worst = std::max(worst, corr);
        if (corr <= kJacobiTol) continue;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        const Vector ap = a.col(p);
        a.col(p) = c * ap - s * a.col(q);
        a.col(q) = s * ap + c * a.col(q);
        const Vector vp = v.col(p);
        v.col(p) = c * vp - s * v.col(q);
        v.col(q) = s * vp + c * v.col(q);
      }
    }
    converged = worst <= kJacobiTol;
  }
  if (!converged) {
    std::ostringstream os;
    os << "svd: Jacobi sweep limit reached for " << m << "x" << n
       << " matrix, off-diagonal correlation still " << worst;
    throw NumericError(os.str());
  }

  Vector norms(n);
  for (Index j = 0; j < n; ++j) norms[j] = a.col(j).norm();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index x, Index y) { return norms[x] > norms[y]; });

  TallSvd out;
  out.u = Matrix::Zero(m, n);
  out.sigma = Vector(n);
  out.v = Matrix(n, n);
  for (Index j = 0; j < n; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.sigma[j] = norms[src];
    out.v.col(j) = v.col(src);
    if (norms[src] > 0.0) out.u.col(j) = a.col(src) / norms[src];
  }
  // Zero singular values leave holes in u; fill them with the standard
  // basis vector whose residual against the placed columns is largest
  // (two projection passes keep the result orthogonal to working
  // precision). Zeros sort to the tail, so columns left of j are final.
  for (Index j = 0; j < n; ++j) {
    if (out.sigma[j] > 0.0) continue;
    Vector best;
    double best_norm = -1.0;
    for (Index e = 0; e < m; ++e) {
      Vector cand = Vector::Zero(m);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass)
        for (Index k = 0; k < j; ++k)
          cand -= out.u.col(k).dot(cand) * out.u.col(k);
      const double cn = cand.norm();
      if (cn > best_norm) {
        best_norm = cn;
        best = std::move(cand);
      }
    }
    if (best_norm <= 0.0)
      throw NumericError("svd: could not complete orthonormal basis");
    out.u.col(j) = best / best_norm;
  }
  return out;
}

}  // namespace

SvdResult svd(const Matrix& w) {
  if (w.rows() < 1 || w.cols() < 1)
    throw ConfigError("svd: matrix must be non-empty");
  if (!w.allFinite()) throw NumericError("svd: input has non-finite entries");

  SvdResult r;
  if (w.rows() >= w.cols()) {
    TallSvd t = jacobi_tall(w);
    r.u = std::move(t.u);
    r.sigma = std::move(t.sigma);
    r.v_rows = t.v.transpose();
  } else {
    // Factor the transpose and swap the roles of the two bases.
    TallSvd t = jacobi_tall(w.transpose());
    r.u = std::move(t.v);
    r.sigma = std::move(t.sigma);
    r.v_rows = t.u.transpose();
  }
  for (Index i = 0; i < r.v_rows.rows(); ++i) {
    Index jmax = 0;
    r.v_rows.row(i).cwiseAbs().maxCoeff(&jmax);
    if (r.v_rows(i, jmax) < 0.0) {
      r.v_rows.row(i) = -r.v_rows.row(i);
      r.u.col(i) = -r.u.col(i);
    }
  }
  return r;
}

Vector column_l2_norms(const Matrix& w) {
  return w.colwise().norm().transpose();
}

double cosine_similarity(const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw ConfigError("cosine_similarity: length mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double frobenius_norm(const Matrix& w) { return w.norm(); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    std::ostringstream os;
    os << "matmul: inner dimensions disagree (" << a.rows() << "x" << a.cols()
       << " vs " << b.rows() << "x" << b.cols() << ")";
    throw ConfigError(os.str());
  }
  return a * b;
}

Matrix gaussian_matrix(Rng& rng, Index rows, Index cols, double stddev) {
  if (rows < 0 || cols < 0)
    throw ConfigError("gaussian_matrix: negative shape");
  if (!(stddev > 0.0))
    throw ConfigError("gaussian_matrix: stddev must be positive");
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.next_gaussian();
  return m;
}

}  // namespace fedlab
