// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedlab {

struct ModelConfig {
  int vocab_size = 1024;
  int seq_len = 16;
  int embed_dim = 32;
  int ffn_dim = 64;
  int num_blocks = 1;
  int num_classes = 20;
  void validate() const;
};

enum class ParamInit { kGaussian, kZero, kOne };

struct TensorSpec {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  ParamInit init = ParamInit::kZero;
};

// The full table of named weight tensors for a configuration; declaration
// order doubles as the deterministic initialization order. Vectors (biases,
// norm gains) are single-column matrices.
std::vector<TensorSpec> param_shapes(const ModelConfig& config);

std::string block_prefix(int block);  // "block0."

struct ParameterSet {
  ModelConfig config;
  TensorMap tensors;

  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

// Gaussian(0, 0.08^2) weight matrices, zero biases, unit norm gains, all
// drawn from one derived stream in table order.
ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed);

}  // namespace fedlab
