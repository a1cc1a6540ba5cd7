// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedlab/drift.hpp"
#include "fedlab/linalg.hpp"
#include "fedlab/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace fedlab;
using doctest::Approx;

TEST_CASE("column norms and directions") {
  Matrix w(2, 3);
  w << 3.0, 0.0, 1.0,
       4.0, 0.0, -1.0;
  const Vector m = magnitude_vector(w);
  CHECK(m(0) == Approx(5.0));
  CHECK(m(1) == 0.0);
  CHECK(m(2) == Approx(std::sqrt(2.0)));

  const Matrix d = direction_matrix(w);
  CHECK(d(0, 0) == Approx(0.6));
  CHECK(d(1, 0) == Approx(0.8));
  CHECK(d(0, 1) == 0.0);  // zero columns stay zero
  CHECK(d(1, 1) == 0.0);
  CHECK(d.col(2).norm() == Approx(1.0));

  const Vector v = magnitude_vector(Matrix::Constant(4, 1, -2.0));
  CHECK(v.size() == 1);
  CHECK(v(0) == Approx(4.0));
}

TEST_CASE("magnitude variation is the mean absolute norm change") {
  Matrix a(2, 2);
  a << 3.0, 0.0,
       4.0, 2.0;
  Matrix b(2, 2);
  b << 6.0, 0.0,
       8.0, 1.0;
  // column norms: (5, 2) vs (10, 1) -> mean(|5-10|, |2-1|) = 3
  CHECK(magnitude_variation(a, b) == Approx(3.0));
  CHECK(magnitude_variation(b, a) == Approx(3.0));
  CHECK(magnitude_variation(a, a) == 0.0);
  CHECK_THROWS_AS(magnitude_variation(a, Matrix::Zero(2, 3)), ConfigError);
}

TEST_CASE("direction variation is the mean of one minus cosine") {
  Matrix a(2, 2);
  a << 1.0, 0.0,
       0.0, 1.0;
  Matrix b(2, 2);
  b << 0.0, 0.0,
       1.0, 2.0;
  // col 0: orthogonal, 1 - 0 = 1; col 1: parallel, 1 - 1 = 0
  CHECK(direction_variation(a, b) == Approx(0.5));

  // scale invariance
  CHECK(direction_variation(a, (2.5 * a).eval()) == Approx(0.0));

  // opposite directions reach the upper end of [0, 2]
  CHECK(direction_variation(a, (-a).eval()) == Approx(2.0));

  // zero/zero contributes 0, zero/nonzero contributes 1
  const Matrix z = Matrix::Zero(2, 2);
  CHECK(direction_variation(z, z) == 0.0);
  Matrix half = Matrix::Zero(2, 2);
  half(0, 0) = 7.0;
  CHECK(direction_variation(z, half) == Approx(0.5));

  CHECK_THROWS_AS(direction_variation(a, Matrix::Zero(3, 2)), ConfigError);
}

TEST_CASE("series over an ordered snapshot list") {
  Matrix w0(2, 2);
  w0 << 1.0, 0.0,
        0.0, 2.0;
  Matrix w1 = w0;
  w1.col(0) *= 3.0;  // norm change only
  Matrix w2 = w1;
  w2(0, 1) = 2.0;  // direction change in column 1

  std::vector<TensorMap> snaps(3);
  snaps[0]["t"] = w0;
  snaps[1]["t"] = w1;
  snaps[2]["t"] = w2;
  for (auto& s : snaps) s["other"] = Matrix::Ones(1, 1);

  const auto series = drift_series(snaps, {"t"});
  REQUIRE(series.size() == 1);
  const DriftSeries& s = series.at("t");
  CHECK(s.tensor_name == "t");
  REQUIRE(s.delta_m.size() == 2);
  REQUIRE(s.delta_d.size() == 2);
  CHECK(s.delta_m[0] == Approx(1.0));  // mean(|3-1|, |2-2|)
  CHECK(s.delta_d[0] == Approx(0.0));
  // norms (3, 2) -> (3, 2*sqrt(2)); cosine of col 1 pair = 1/sqrt(2)
  CHECK(s.delta_m[1] == Approx((2.0 * std::sqrt(2.0) - 2.0) / 2.0));
  CHECK(s.delta_d[1] == Approx((1.0 - 1.0 / std::sqrt(2.0)) / 2.0));

  const auto both = drift_series(snaps, {"t", "other"});
  CHECK(both.size() == 2);
  CHECK(both.at("other").delta_m == std::vector<double>{0.0, 0.0});
  CHECK(both.at("other").delta_d == std::vector<double>{0.0, 0.0});
}

TEST_CASE("constant snapshots give all-zero series") {
  Rng rng(5);
  TensorMap snap;
  snap["w"] = gaussian_matrix(rng, 6, 4, 1.0);
  const std::vector<TensorMap> snaps(4, snap);
  const auto series = drift_series(snaps, {"w"});
  const DriftSeries& s = series.at("w");
  for (double v : s.delta_m) CHECK(v == 0.0);
  for (double v : s.delta_d) CHECK(v == 0.0);
}

TEST_CASE("series input validation") {
  TensorMap a;
  a["w"] = Matrix::Ones(2, 2);
  TensorMap b = a;

  CHECK_THROWS_AS(drift_series({a}, {"w"}), ConfigError);
  CHECK_THROWS_AS(drift_series({a, b}, {}), ConfigError);
  CHECK_THROWS_WITH_AS(drift_series({a, b}, {"nope"}),
                       doctest::Contains("available: w"), ConfigError);

  TensorMap reshaped = b;
  reshaped.at("w") = Matrix::Ones(2, 3);
  CHECK_THROWS_AS(drift_series({a, reshaped}, {"w"}), ConfigError);
}

TEST_CASE("csv output") {
  DriftSeries s;
  s.tensor_name = "t";
  s.delta_m = {0.5, 0.125};
  s.delta_d = {1.0, 0.25};

  const std::string path = "drift_test_out.csv";
  save_drift_csv(path, s, {1, 2});
  std::ifstream in(path);
  REQUIRE(in.good());
  std::stringstream buf;
  buf << in.rdbuf();
  CHECK(buf.str() == "round,delta_m,delta_d\n1,0.5,1\n2,0.125,0.25\n");
  in.close();
  std::remove(path.c_str());

  CHECK_THROWS_AS(save_drift_csv(path, s, {1}), ConfigError);
  CHECK_THROWS_AS(save_drift_csv("no_such_dir/x.csv", s, {1, 2}), DataError);
}
