// SPDX-License-Identifier: Apache-2.0
#include "fedlab/adapters.hpp"

#include "fedlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace fedlab {

AdapterMode AdapterMode::full_ft() { return {PeftKind::kFullFT, 0, 1.0, 0}; }

AdapterMode AdapterMode::bias_only() { return {PeftKind::kBiasOnly, 0, 1.0, 0}; }

AdapterMode AdapterMode::bottleneck(int dim) {
  return {PeftKind::kBottleneck, 0, 1.0, dim};
}

AdapterMode AdapterMode::lora(int rank, double beta) {
  return {PeftKind::kLoRA, rank, beta, 0};
}

AdapterMode AdapterMode::federa(int rank, double beta) {
  return {PeftKind::kFeDeRA, rank, beta, 0};
}

AdapterMode AdapterMode::parse(const std::string& name, int rank, double beta,
                               int bottleneck_dim) {
  AdapterMode m;
  if (name == "fedft") m = full_ft();
  else if (name == "fedbf") m = bias_only();
  else if (name == "fedap") m = bottleneck(bottleneck_dim);
  else if (name == "fedlr") m = lora(rank, beta);
  else if (name == "federa") m = federa(rank, beta);
  else
    throw ConfigError("unknown mode '" + name +
                      "' (expected fedft, fedbf, fedap, fedlr or federa)");
  m.validate();
  return m;
}

std::string AdapterMode::name() const {
  switch (kind) {
    case PeftKind::kFullFT: return "fedft";
    case PeftKind::kBiasOnly: return "fedbf";
    case PeftKind::kBottleneck: return "fedap";
    case PeftKind::kLoRA: return "fedlr";
    case PeftKind::kFeDeRA: return "federa";
  }
  throw ConfigError("invalid adapter mode");
}

void AdapterMode::validate() const {
  if (low_rank()) {
    if (rank < 1) throw ConfigError("adapter rank must be >= 1");
    if (!(beta > 0.0)) throw ConfigError("adapter beta must be positive");
  }
  if (kind == PeftKind::kBottleneck && bottleneck_dim < 1)
    throw ConfigError("bottleneck dim must be >= 1");
}

std::vector<std::string> default_targets(const ModelConfig& config) {
  std::vector<std::string> t;
  for (int b = 0; b < config.num_blocks; ++b) {
    t.push_back(block_prefix(b) + "w_q");
    t.push_back(block_prefix(b) + "w_v");
  }
  return t;
}

std::vector<std::string> trainable_base_names(const AdapterMode& mode,
                                              const ModelConfig& config) {
  std::vector<std::string> names;
  switch (mode.kind) {
    case PeftKind::kFullFT:
      for (const auto& spec : param_shapes(config)) names.push_back(spec.name);
      break;
    case PeftKind::kBiasOnly:
      for (int b = 0; b < config.num_blocks; ++b) {
        const std::string p = block_prefix(b);
        for (const char* n : {"b_q", "b_k", "b_v", "b_o", "norm1_gain",
                              "b_ff1", "b_ff2", "norm2_gain"})
          names.push_back(p + n);
      }
      names.push_back("w_cls");
      names.push_back("b_cls");
      break;
    default:
      names.push_back("w_cls");
      names.push_back("b_cls");
  }
  return names;
}

namespace {

void check_targets(const ParameterSet& params,
                   const std::vector<std::string>& targets, int rank) {
  if (targets.empty()) throw ConfigError("adapter target list is empty");
  std::set<std::string> seen;
  for (const auto& name : targets) {
    if (!seen.insert(name).second)
      throw ConfigError("duplicate adapter target: " + name);
    if (name == "w_cls" || name == "b_cls")
      throw ConfigError("adapter target '" + name +
                        "' is already trainable as the classifier head");
    const Matrix& w = params.at(name);
    if (w.rows() < 2 || w.cols() < 2)
      throw ConfigError("adapter target '" + name + "' is not a weight matrix");
    if (rank > std::min(w.rows(), w.cols()))
      throw ConfigError("rank " + std::to_string(rank) +
                        " exceeds min dimension of target '" + name + "'");
  }
}

}  // namespace

AdapterSet attach_lora(ParameterSet& params,
                       const std::vector<std::string>& targets, int rank,
                       double beta, Rng& rng) {
  AdapterMode mode = AdapterMode::lora(rank, beta);
  mode.validate();
  check_targets(params, targets, rank);
  AdapterSet set;
  set.mode = mode;
  set.trainable_base = trainable_base_names(mode, params.config);
  for (const auto& name : targets) {
    const Matrix& w = params.at(name);
    LoraPair pair;
    pair.r = rank;
    pair.beta = beta;
    pair.target_name = name;
    pair.a = gaussian_matrix(rng, rank, w.cols(),
                             std::sqrt(1.0 / static_cast<double>(w.cols())));
    pair.b = Matrix::Zero(w.rows(), rank);
    set.lora.emplace(name, std::move(pair));
  }
  return set;
}

AdapterSet attach_federa(ParameterSet& params,
                         const std::vector<std::string>& targets, int rank,
                         double beta) {
  AdapterMode mode = AdapterMode::federa(rank, beta);
  mode.validate();
  check_targets(params, targets, rank);
  AdapterSet set;
  set.mode = mode;
  set.trainable_base = trainable_base_names(mode, params.config);
  for (const auto& name : targets) {
    Matrix& w = params.at(name);
    const SvdResult f = svd(w);
    Vector root = f.sigma.head(rank).cwiseSqrt();
    LoraPair pair;
    pair.r = rank;
    pair.beta = beta;
    pair.target_name = name;
    pair.a = root.asDiagonal() * f.v_rows.topRows(rank);
    pair.b = f.u.leftCols(rank) * root.asDiagonal();
    w -= (beta / rank) * pair.b * pair.a;
    set.lora.emplace(name, std::move(pair));
  }
  return set;
}

AdapterSet attach_bottleneck(ParameterSet& params, Rng& rng, int dim) {
  AdapterMode mode = AdapterMode::bottleneck(dim);
  mode.validate();
  const Index d = params.config.embed_dim;
  AdapterSet set;
  set.mode = mode;
  set.trainable_base = trainable_base_names(mode, params.config);
  for (int b = 0; b < params.config.num_blocks; ++b) {
    for (const char* site : {"adapter_attn", "adapter_ffn"}) {
      BottleneckSite s;
      s.w_down = gaussian_matrix(rng, d, dim,
                                 1.0 / std::sqrt(static_cast<double>(d)));
      s.b_down = Matrix::Zero(dim, 1);
      s.w_up = Matrix::Zero(dim, d);
      s.b_up = Matrix::Zero(d, 1);
      set.bottleneck.emplace(block_prefix(b) + site, std::move(s));
    }
  }
  return set;
}

AdapterSet attach_adapters(ParameterSet& params, const AdapterMode& mode,
                           const std::vector<std::string>& targets,
                           std::uint64_t seed) {
  mode.validate();
  switch (mode.kind) {
    case PeftKind::kFullFT:
    case PeftKind::kBiasOnly: {
      AdapterSet set;
      set.mode = mode;
      set.trainable_base = trainable_base_names(mode, params.config);
      return set;
    }
    case PeftKind::kBottleneck: {
      Rng rng = Rng::derive(seed, "bottleneck-init");
      return attach_bottleneck(params, rng, mode.bottleneck_dim);
    }
    case PeftKind::kLoRA: {
      Rng rng = Rng::derive(seed, "lora-init");
      return attach_lora(params, targets, mode.rank, mode.beta, rng);
    }
    case PeftKind::kFeDeRA:
      return attach_federa(params, targets, mode.rank, mode.beta);
  }
  throw ConfigError("invalid adapter mode");
}

Matrix effective_weight(const Matrix& w0, const LoraPair& pair) {
  if (pair.b.rows() != w0.rows() || pair.a.cols() != w0.cols() ||
      pair.b.cols() != pair.a.rows())
    throw ConfigError("effective_weight: adapter shapes do not match base");
  return w0 + (pair.beta / pair.r) * pair.b * pair.a;
}

void merge(ParameterSet& params, AdapterSet& adapters) {
  if (!adapters.mode.low_rank())
    throw ConfigError("merge: only low-rank adapters can be folded in");
  if (adapters.lora.empty())
    throw ConfigError("merge: no adapters present");
  for (const auto& [name, pair] : adapters.lora)
    params.at(name) = effective_weight(params.at(name), pair);
  adapters.lora.clear();
}

TrainableCount trainable_parameters(const AdapterMode& mode,
                                    const ModelConfig& config,
                                    const std::vector<std::string>& targets) {
  mode.validate();
  const auto specs = param_shapes(config);
  const auto shape_of = [&](const std::string& name) -> const TensorSpec& {
    for (const auto& s : specs)
      if (s.name == name) return s;
    throw ConfigError("unknown parameter: " + name);
  };

  TrainableCount out;
  for (const auto& name : trainable_base_names(mode, config)) {
    const auto& s = shape_of(name);
    out.names.push_back(name);
    out.total += static_cast<long long>(s.rows) * s.cols;
  }
  if (mode.low_rank()) {
    std::set<std::string> seen;
    for (const auto& name : targets) {
      if (!seen.insert(name).second)
        throw ConfigError("duplicate adapter target: " + name);
      if (name == "w_cls" || name == "b_cls")
        throw ConfigError("adapter target '" + name +
                          "' is already trainable as the classifier head");
      const auto& s = shape_of(name);
      if (mode.rank > std::min(s.rows, s.cols))
        throw ConfigError("rank " + std::to_string(mode.rank) +
                          " exceeds min dimension of target '" + name + "'");
      out.names.push_back(name + ".lora_a");
      out.names.push_back(name + ".lora_b");
      out.adapter_scalars += static_cast<long long>(mode.rank) * s.cols +
                             static_cast<long long>(s.rows) * mode.rank;
    }
  } else if (mode.kind == PeftKind::kBottleneck) {
    const long long d = config.embed_dim;
    const long long dim = mode.bottleneck_dim;
    for (int b = 0; b < config.num_blocks; ++b) {
      for (const char* site : {"adapter_attn", "adapter_ffn"}) {
        const std::string p = block_prefix(b) + site;
        out.names.push_back(p + ".w_down");
        out.names.push_back(p + ".b_down");
        out.names.push_back(p + ".w_up");
        out.names.push_back(p + ".b_up");
        out.adapter_scalars += d * dim + dim + dim * d + d;
      }
    }
  }
  out.total += out.adapter_scalars;
  return out;
}

TensorMap collect_trainables(const ParameterSet& params,
                             const AdapterSet& adapters) {
  TensorMap out;
  for (const auto& name : adapters.trainable_base)
    out.emplace(name, params.at(name));
  for (const auto& [name, pair] : adapters.lora) {
    out.emplace(name + ".lora_a", pair.a);
    out.emplace(name + ".lora_b", pair.b);
  }
  for (const auto& [name, site] : adapters.bottleneck) {
    out.emplace(name + ".w_down", site.w_down);
    out.emplace(name + ".b_down", site.b_down);
    out.emplace(name + ".w_up", site.w_up);
    out.emplace(name + ".b_up", site.b_up);
  }
  return out;
}

namespace {

void assign_checked(Matrix& dst, const TensorMap& src, const std::string& key) {
  const auto it = src.find(key);
  if (it == src.end())
    throw ConfigError("apply_trainables: missing tensor " + key);
  if (it->second.rows() != dst.rows() || it->second.cols() != dst.cols())
    throw ConfigError("apply_trainables: shape mismatch for " + key);
  dst = it->second;
}

}  // namespace

void apply_trainables(ParameterSet& params, AdapterSet& adapters,
                      const TensorMap& trainables) {
  std::size_t expected = adapters.trainable_base.size() +
                         2 * adapters.lora.size() +
                         4 * adapters.bottleneck.size();
  if (trainables.size() != expected)
    throw ConfigError("apply_trainables: tensor count mismatch");
  for (const auto& name : adapters.trainable_base)
    assign_checked(params.at(name), trainables, name);
  for (auto& [name, pair] : adapters.lora) {
    assign_checked(pair.a, trainables, name + ".lora_a");
    assign_checked(pair.b, trainables, name + ".lora_b");
  }
  for (auto& [name, site] : adapters.bottleneck) {
    assign_checked(site.w_down, trainables, name + ".w_down");
    assign_checked(site.b_down, trainables, name + ".b_down");
    assign_checked(site.w_up, trainables, name + ".w_up");
    assign_checked(site.b_up, trainables, name + ".b_up");
  }
}

}  // namespace fedlab
