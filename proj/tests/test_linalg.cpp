// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedlab/linalg.hpp"
#include "fedlab/rng.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

using namespace fedlab;

namespace {

Matrix random_matrix(Rng& rng, Index rows, Index cols) {
  return gaussian_matrix(rng, rows, cols, 1.0);
}

// dumb reference product, kept deliberately independent of Eigen
Matrix matmul_reference(const Matrix& a, const Matrix& b) {
  Matrix c = Matrix::Zero(a.rows(), b.cols());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.cols(); ++j)
      for (Index k = 0; k < a.cols(); ++k) c(i, j) += a(i, k) * b(k, j);
  return c;
}

void check_svd_invariants(const Matrix& w, const SvdResult& f, double tol) {
  const Index p = std::min(w.rows(), w.cols());
  REQUIRE(f.u.rows() == w.rows());
  REQUIRE(f.u.cols() == p);
  REQUIRE(f.sigma.size() == p);
  REQUIRE(f.v_rows.rows() == p);
  REQUIRE(f.v_rows.cols() == w.cols());

  const Matrix recon = f.u * f.sigma.asDiagonal() * f.v_rows;
  const double scale = std::max(1.0, frobenius_norm(w));
  CHECK(frobenius_norm(recon - w) <= tol * scale);

  const Matrix utu = f.u.transpose() * f.u;
  const Matrix vvt = f.v_rows * f.v_rows.transpose();
  CHECK(frobenius_norm(utu - Matrix::Identity(p, p)) <= tol);
  CHECK(frobenius_norm(vvt - Matrix::Identity(p, p)) <= tol);

  for (Index i = 0; i + 1 < p; ++i) CHECK(f.sigma(i) >= f.sigma(i + 1));
  for (Index i = 0; i < p; ++i) CHECK(f.sigma(i) >= 0.0);
}

}  // namespace

TEST_CASE("svd of hand-sized matrices") {
  SUBCASE("identity") {
    const Matrix eye = Matrix::Identity(4, 4);
    const SvdResult f = svd(eye);
    for (Index i = 0; i < 4; ++i) CHECK(f.sigma(i) == doctest::Approx(1.0));
    check_svd_invariants(eye, f, 1e-12);
  }
  SUBCASE("diagonal with a negative entry") {
    Matrix w = Matrix::Zero(2, 2);
    w(0, 0) = 3.0;
    w(1, 1) = -2.0;
    const SvdResult f = svd(w);
    CHECK(f.sigma(0) == doctest::Approx(3.0));
    CHECK(f.sigma(1) == doctest::Approx(2.0));
    check_svd_invariants(w, f, 1e-12);
  }
  SUBCASE("rank deficient") {
    Matrix w(2, 2);
    w << 1, 2, 2, 4;
    const SvdResult f = svd(w);
    CHECK(f.sigma(0) == doctest::Approx(5.0));
    CHECK(f.sigma(1) == doctest::Approx(0.0));
    check_svd_invariants(w, f, 1e-10);
  }
  SUBCASE("zero matrix still gets orthonormal factors") {
    const Matrix w = Matrix::Zero(3, 3);
    const SvdResult f = svd(w);
    CHECK(f.sigma.maxCoeff() == 0.0);
    check_svd_invariants(w, f, 1e-12);
  }
  SUBCASE("single row and single column") {
    Matrix row(1, 3);
    row << 2, -2, 1;
    const SvdResult fr = svd(row);
    CHECK(fr.sigma(0) == doctest::Approx(3.0));
    check_svd_invariants(row, fr, 1e-12);

    Matrix col(3, 1);
    col << 0, 3, 4;
    const SvdResult fc = svd(col);
    CHECK(fc.sigma(0) == doctest::Approx(5.0));
    check_svd_invariants(col, fc, 1e-12);
  }
}

TEST_CASE("svd random-matrix properties and cross-check") {
  Rng rng(99);
  const std::vector<std::pair<Index, Index>> shapes = {
      {8, 8}, {64, 48}, {48, 64}, {1, 16}, {32, 1}, {5, 3}, {3, 7}};
  for (const auto& [rows, cols] : shapes) {
    for (int rep = 0; rep < 4; ++rep) {
      const Matrix w = random_matrix(rng, rows, cols);
      const SvdResult f = svd(w);
      check_svd_invariants(w, f, 1e-10);

      const Eigen::JacobiSVD<Eigen::MatrixXd> ref(w);
      for (Index i = 0; i < f.sigma.size(); ++i)
        CHECK(f.sigma(i) == doctest::Approx(ref.singularValues()(i)).epsilon(1e-8));
    }
  }
}

TEST_CASE("svd of the transpose has the same singular values") {
  Rng rng(7);
  const Matrix w = random_matrix(rng, 12, 5);
  const SvdResult a = svd(w);
  const SvdResult b = svd(Matrix(w.transpose()));
  for (Index i = 0; i < a.sigma.size(); ++i)
    CHECK(a.sigma(i) == doctest::Approx(b.sigma(i)).epsilon(1e-10));
}

TEST_CASE("svd sign canonicalization and determinism") {
  Rng rng(13);
  const Matrix w = random_matrix(rng, 6, 9);
  const SvdResult a = svd(w);
  const SvdResult b = svd(w);
  CHECK((a.u - b.u).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.v_rows - b.v_rows).cwiseAbs().maxCoeff() == 0.0);
  for (Index i = 0; i < a.v_rows.rows(); ++i) {
    Index jmax = 0;
    a.v_rows.row(i).cwiseAbs().maxCoeff(&jmax);
    CHECK(a.v_rows(i, jmax) >= 0.0);
  }
}

TEST_CASE("matmul matches a scalar-loop reference") {
  Rng rng(55);
  const std::vector<std::pair<std::pair<Index, Index>, std::pair<Index, Index>>>
      cases = {{{3, 4}, {4, 5}}, {{1, 7}, {7, 1}}, {{6, 2}, {2, 6}}};
  for (const auto& [sa, sb] : cases) {
    const Matrix a = random_matrix(rng, sa.first, sa.second);
    const Matrix b = random_matrix(rng, sb.first, sb.second);
    const Matrix got = matmul(a, b);
    const Matrix want = matmul_reference(a, b);
    CHECK(frobenius_norm(got - want) < 1e-12 * std::max(1.0, frobenius_norm(want)));
  }
  const Matrix a = random_matrix(rng, 3, 4);
  const Matrix b = random_matrix(rng, 3, 4);
  CHECK_THROWS_AS(matmul(a, b), ConfigError);
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("3x4"), ConfigError);
}

TEST_CASE("column norms") {
  Matrix w(2, 3);
  w << 3, 0, 1, 4, 0, -1;
  const Vector norms = column_l2_norms(w);
  CHECK(norms(0) == doctest::Approx(5.0));
  CHECK(norms(1) == doctest::Approx(0.0));
  CHECK(norms(2) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("cosine similarity conventions") {
  Vector x(2), y(2), z(2);
  x << 1, 0;
  y << 0, 1;
  z << 0, 0;
  CHECK(cosine_similarity(x, y) == doctest::Approx(0.0));
  CHECK(cosine_similarity(x, x) == doctest::Approx(1.0));
  Vector nx = -x;
  CHECK(cosine_similarity(x, nx) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(z, z) == 1.0);
  CHECK(cosine_similarity(z, x) == 0.0);
  CHECK(cosine_similarity(x, z) == 0.0);

  Vector w(3);
  w << 1, 1, 1;
  CHECK_THROWS_AS(cosine_similarity(x, w), ConfigError);

  // scaled copies must clamp cleanly inside [-1, 1]
  Vector a(3), b(3);
  a << 0.1, 0.2, -0.3;
  b = 7.5 * a;
  CHECK(cosine_similarity(a, b) <= 1.0);
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
}

TEST_CASE("frobenius norm") {
  Matrix w(1, 2);
  w << 3, 4;
  CHECK(frobenius_norm(w) == doctest::Approx(5.0));
  CHECK(frobenius_norm(Matrix::Zero(3, 3)) == 0.0);
}

TEST_CASE("gaussian_matrix moments, determinism and degenerate shapes") {
  Rng a(4);
  const Matrix m = gaussian_matrix(a, 200, 100, 0.5);
  const double mean = m.mean();
  const double var = (m.array() - mean).square().mean();
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(var - 0.25) < 0.01);

  Rng b(4);
  const Matrix m2 = gaussian_matrix(b, 200, 100, 0.5);
  CHECK((m - m2).cwiseAbs().maxCoeff() == 0.0);

  Rng c(4);
  const Matrix empty1 = gaussian_matrix(c, 0, 16, 1.0);
  CHECK(empty1.size() == 0);
  const Matrix empty2 = gaussian_matrix(c, 8, 0, 1.0);
  CHECK(empty2.size() == 0);
  // the empty draws consumed nothing, so c still tracks a fresh stream
  const Matrix m3 = gaussian_matrix(c, 200, 100, 0.5);
  CHECK((m - m3).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(gaussian_matrix(c, -1, 3, 1.0), ConfigError);
  CHECK_THROWS_AS(gaussian_matrix(c, 3, 3, 0.0), ConfigError);
  CHECK_THROWS_AS(gaussian_matrix(c, 3, 3, -1.0), ConfigError);
}
