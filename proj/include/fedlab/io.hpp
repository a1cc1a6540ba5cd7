// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/common.hpp"

#include <iosfwd>
#include <string>

namespace fedlab {

// Flat binary container for named tensors.
//
//   magic   "FDRA"
//   version u32 = 1
//   record* (until end of stream):
//     name_len u32, name bytes
//     rank     u32 (1 or 2)
//     dims     rank x u64
//     payload  prod(dims) x float64, row-major
//
// All integers and doubles are little-endian. Tensors are written in
// name-sorted order and single-column matrices are stored as rank-1
// records, so write -> read -> write reproduces the bytes exactly.
void write_tensors(std::ostream& out, const TensorMap& tensors);
TensorMap read_tensors(std::istream& in);

void save_tensors(const std::string& path, const TensorMap& tensors);
TensorMap load_tensors(const std::string& path);

// Shortest-exact float formatting for CSV cells (17 significant digits).
std::string format_g17(double v);

}  // namespace fedlab
