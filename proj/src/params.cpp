// SPDX-License-Identifier: Apache-2.0
#include "fedlab/params.hpp"

#include "fedlab/linalg.hpp"
#include "fedlab/rng.hpp"

namespace fedlab {

void ModelConfig::validate() const {
  if (vocab_size < 1 || seq_len < 1 || embed_dim < 1 || ffn_dim < 1 ||
      num_blocks < 1 || num_classes < 1)
    throw ConfigError("model config: all dimensions must be >= 1");
  if (embed_dim < 2) throw ConfigError("model config: embed_dim must be >= 2");
}

std::string block_prefix(int block) {
  return "block" + std::to_string(block) + ".";
}

std::vector<TensorSpec> param_shapes(const ModelConfig& config) {
  config.validate();
  const Index v = config.vocab_size;
  const Index l = config.seq_len;
  const Index d = config.embed_dim;
  const Index f = config.ffn_dim;
  const Index c = config.num_classes;

  std::vector<TensorSpec> specs;
  specs.push_back({"token_embedding", v, d, ParamInit::kGaussian});
  specs.push_back({"pos_embedding", l, d, ParamInit::kGaussian});
  for (int b = 0; b < config.num_blocks; ++b) {
    const std::string p = block_prefix(b);
    specs.push_back({p + "w_q", d, d, ParamInit::kGaussian});
    specs.push_back({p + "b_q", d, 1, ParamInit::kZero});
    specs.push_back({p + "w_k", d, d, ParamInit::kGaussian});
    specs.push_back({p + "b_k", d, 1, ParamInit::kZero});
    specs.push_back({p + "w_v", d, d, ParamInit::kGaussian});
    specs.push_back({p + "b_v", d, 1, ParamInit::kZero});
    specs.push_back({p + "w_o", d, d, ParamInit::kGaussian});
    specs.push_back({p + "b_o", d, 1, ParamInit::kZero});
    specs.push_back({p + "norm1_gain", d, 1, ParamInit::kOne});
    specs.push_back({p + "w_ff1", d, f, ParamInit::kGaussian});
    specs.push_back({p + "b_ff1", f, 1, ParamInit::kZero});
    specs.push_back({p + "w_ff2", f, d, ParamInit::kGaussian});
    specs.push_back({p + "b_ff2", d, 1, ParamInit::kZero});
    specs.push_back({p + "norm2_gain", d, 1, ParamInit::kOne});
  }
  specs.push_back({"w_cls", d, c, ParamInit::kGaussian});
  specs.push_back({"b_cls", c, 1, ParamInit::kZero});
  return specs;
}

const Matrix& ParameterSet::at(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end())
    throw ConfigError("unknown parameter: " + name);
  return it->second;
}

Matrix& ParameterSet::at(const std::string& name) {
  const auto it = tensors.find(name);
  if (it == tensors.end())
    throw ConfigError("unknown parameter: " + name);
  return it->second;
}

ParameterSet init_parameters(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet params;
  params.config = config;
  Rng rng = Rng::derive(seed, "param-init");
  for (const auto& spec : param_shapes(config)) {
    Matrix t;
    switch (spec.init) {
      case ParamInit::kGaussian:
        t = gaussian_matrix(rng, spec.rows, spec.cols, 0.08);
        break;
      case ParamInit::kZero:
        t = Matrix::Zero(spec.rows, spec.cols);
        break;
      case ParamInit::kOne:
        t = Matrix::Ones(spec.rows, spec.cols);
        break;
    }
    params.tensors.emplace(spec.name, std::move(t));
  }
  return params;
}

}  // namespace fedlab
