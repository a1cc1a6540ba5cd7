// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace fedlab {

// Column-wise stability diagnostics between consecutive snapshots of a
// named tensor. Entry t-1 compares snapshot t against snapshot t-1.
struct DriftSeries {
  std::string tensor_name;
  std::vector<double> delta_m;
  std::vector<double> delta_d;
};

// Per-column Euclidean norms (vectors count as one column).
Vector magnitude_vector(const Matrix& w);

// Columns scaled to unit norm; zero columns stay zero.
Matrix direction_matrix(const Matrix& w);

// Mean absolute difference of column norms.
double magnitude_variation(const Matrix& w1, const Matrix& w2);

// Mean over columns of 1 - cosine. The zero-column conventions make a
// zero/zero pair contribute 0 and a zero/nonzero pair contribute 1, so the
// result stays in [0, 2].
double direction_variation(const Matrix& w1, const Matrix& w2);

// Both series for every requested tensor across an ordered snapshot list.
std::map<std::string, DriftSeries> drift_series(
    const std::vector<TensorMap>& snapshots,
    const std::vector<std::string>& names);

// CSV with columns round,delta_m,delta_d; rounds labels the later snapshot
// of each consecutive pair.
void save_drift_csv(const std::string& path, const DriftSeries& series,
                    const std::vector<int>& rounds);

}  // namespace fedlab
