// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

namespace fedlab {

// Row-major storage so that serialized buffers, hand-written kernels and
// Eigen views all agree on element order.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Named tensors move between modules as an ordered map; the sorted iteration
// order keeps serialization, aggregation and reporting stable across runs.
using TensorMap = std::map<std::string, Matrix>;

// Error taxonomy, mirrored one-to-one by the CLI exit codes.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fedlab
