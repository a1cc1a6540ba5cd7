// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/common.hpp"
#include "fedlab/params.hpp"
#include "fedlab/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace fedlab {

enum class PeftKind { kFullFT, kBiasOnly, kBottleneck, kLoRA, kFeDeRA };

struct AdapterMode {
  PeftKind kind = PeftKind::kFullFT;
  int rank = 32;
  double beta = 32.0;
  int bottleneck_dim = 8;

  static AdapterMode full_ft();
  static AdapterMode bias_only();
  static AdapterMode bottleneck(int dim);
  static AdapterMode lora(int rank, double beta);
  static AdapterMode federa(int rank, double beta);

  // Accepts "fedft", "fedbf", "fedap", "fedlr" or "federa".
  static AdapterMode parse(const std::string& name, int rank, double beta,
                           int bottleneck_dim);
  std::string name() const;
  bool low_rank() const {
    return kind == PeftKind::kLoRA || kind == PeftKind::kFeDeRA;
  }
  void validate() const;
};

// Low-rank pair attached to a frozen d x k base matrix; the effective
// contribution is (beta/r) * b * a.
struct LoraPair {
  Matrix a;  // r x k
  Matrix b;  // d x r
  int r = 0;
  double beta = 0.0;
  std::string target_name;
};

// Residual bottleneck inserted after a sublayer: out = in + relu(in *
// w_down + b_down) * w_up + b_up. Zero-initialized up-projection makes it
// the identity at attach time.
struct BottleneckSite {
  Matrix w_down;  // d x dim
  Matrix b_down;  // dim x 1
  Matrix w_up;    // dim x d
  Matrix b_up;    // d x 1
};

struct AdapterSet {
  AdapterMode mode;
  std::map<std::string, LoraPair> lora;             // target name -> pair
  std::map<std::string, BottleneckSite> bottleneck;  // site name -> weights
  std::vector<std::string> trainable_base;           // names in ParameterSet
};

// w_q and w_v of every block.
std::vector<std::string> default_targets(const ModelConfig& config);

// Base tensors that stay trainable under a mode: everything for FullFT;
// biases, norm gains and the classifier head for BiasOnly; the classifier
// head alone for the adapter modes.
std::vector<std::string> trainable_base_names(const AdapterMode& mode,
                                              const ModelConfig& config);

// a ~ N(0, 1/k), b = 0; targets are frozen.
AdapterSet attach_lora(ParameterSet& params,
                       const std::vector<std::string>& targets, int rank,
                       double beta, Rng& rng);

// SVD-initialized pair: a = sqrt(sigma) rows of v, b = u columns scaled by
// sqrt(sigma), then w0 -= (beta/r) * b * a so the initial output is
// preserved for any beta.
AdapterSet attach_federa(ParameterSet& params,
                         const std::vector<std::string>& targets, int rank,
                         double beta);

// One bottleneck after attention and one after the FFN of every block.
AdapterSet attach_bottleneck(ParameterSet& params, Rng& rng, int dim);

// Mode dispatch; derives adapter init streams from the seed.
AdapterSet attach_adapters(ParameterSet& params, const AdapterMode& mode,
                           const std::vector<std::string>& targets,
                           std::uint64_t seed);

Matrix effective_weight(const Matrix& w0, const LoraPair& pair);

// Folds every low-rank pair into its base matrix and drops the adapters.
// Calling it again (or in bottleneck mode) is an error.
void merge(ParameterSet& params, AdapterSet& adapters);

struct TrainableCount {
  std::vector<std::string> names;  // base + adapter tensor names
  long long total = 0;
  long long adapter_scalars = 0;  // adapter tensors only
};

// Pure shape arithmetic; never allocates the tensors.
TrainableCount trainable_parameters(const AdapterMode& mode,
                                    const ModelConfig& config,
                                    const std::vector<std::string>& targets);

// The trainable view that travels between server and clients: base tensors
// plus adapter tensors under "<target>.lora_a"/"<target>.lora_b" and
// "<site>.w_down" etc.
TensorMap collect_trainables(const ParameterSet& params,
                             const AdapterSet& adapters);
void apply_trainables(ParameterSet& params, AdapterSet& adapters,
                      const TensorMap& trainables);

}  // namespace fedlab
