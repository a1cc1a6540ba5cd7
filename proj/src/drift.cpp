// SPDX-License-Identifier: Apache-2.0
#include "fedlab/drift.hpp"

#include "fedlab/io.hpp"
#include "fedlab/linalg.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace fedlab {

Vector magnitude_vector(const Matrix& w) { return column_l2_norms(w); }

Matrix direction_matrix(const Matrix& w) {
  Matrix d = w;
  for (Index j = 0; j < w.cols(); ++j) {
    const double n = w.col(j).norm();
    if (n > 0.0) d.col(j) /= n;
  }
  return d;
}

namespace {

void check_shapes(const Matrix& w1, const Matrix& w2, const char* who) {
  if (w1.rows() != w2.rows() || w1.cols() != w2.cols()) {
    std::ostringstream os;
    os << who << ": shape mismatch (" << w1.rows() << "x" << w1.cols()
       << " vs " << w2.rows() << "x" << w2.cols() << ")";
    throw ConfigError(os.str());
  }
}

}  // namespace

double magnitude_variation(const Matrix& w1, const Matrix& w2) {
  check_shapes(w1, w2, "magnitude_variation");
  const Vector m1 = magnitude_vector(w1);
  const Vector m2 = magnitude_vector(w2);
  return (m1 - m2).cwiseAbs().mean();
}

double direction_variation(const Matrix& w1, const Matrix& w2) {
  check_shapes(w1, w2, "direction_variation");
  double total = 0.0;
  for (Index j = 0; j < w1.cols(); ++j)
    total += 1.0 - cosine_similarity(w1.col(j), w2.col(j));
  return total / static_cast<double>(w1.cols());
}

std::map<std::string, DriftSeries> drift_series(
    const std::vector<TensorMap>& snapshots,
    const std::vector<std::string>& names) {
  if (snapshots.size() < 2)
    throw ConfigError("drift_series: need at least 2 snapshots");
  if (names.empty()) throw ConfigError("drift_series: no tensor names given");
  for (const auto& name : names) {
    for (const auto& snap : snapshots) {
      if (snap.count(name)) continue;
      std::ostringstream os;
      os << "drift_series: tensor '" << name << "' missing; available:";
      for (const auto& [available, t] : snap) os << ' ' << available;
      throw ConfigError(os.str());
    }
  }

  std::map<std::string, DriftSeries> out;
  for (const auto& name : names) {
    DriftSeries series;
    series.tensor_name = name;
    for (std::size_t t = 1; t < snapshots.size(); ++t) {
      const Matrix& prev = snapshots[t - 1].at(name);
      const Matrix& cur = snapshots[t].at(name);
      series.delta_m.push_back(magnitude_variation(cur, prev));
      series.delta_d.push_back(direction_variation(cur, prev));
    }
    out.emplace(name, std::move(series));
  }
  return out;
}

void save_drift_csv(const std::string& path, const DriftSeries& series,
                    const std::vector<int>& rounds) {
  if (rounds.size() != series.delta_m.size())
    throw ConfigError("save_drift_csv: round labels do not match series");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << "round,delta_m,delta_d\n";
  for (std::size_t i = 0; i < rounds.size(); ++i)
    out << rounds[i] << ',' << format_g17(series.delta_m[i]) << ','
        << format_g17(series.delta_d[i]) << '\n';
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace fedlab
