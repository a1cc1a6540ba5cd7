// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/adapters.hpp"
#include "fedlab/common.hpp"
#include "fedlab/data.hpp"
#include "fedlab/params.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace fedlab {

// Post-norm transformer encoder: single-head scaled dot-product attention,
// RMSNorm (learned gain, eps 1e-6) after the attention and FFN residuals,
// ReLU FFN, mean pooling over positions, linear classifier. Activations are
// row vectors, so every projection is activation * W.

struct Batch {
  IntMatrix token_ids;      // B x seq_len
  std::vector<int> labels;  // length B
};

Batch batch_from(const Dataset& dataset, const std::vector<Index>& rows);

struct AdapterSiteCache {
  bool active = false;
  Matrix input;
  Matrix hidden_pre;
  Matrix hidden;
};

struct BlockCache {
  Matrix e_in;
  Matrix q, k, v;
  Matrix attn_p;  // stacked per-sample softmax rows, (B*L) x L
  Matrix attn_o;
  Matrix proj;
  AdapterSiteCache ad_attn;
  Matrix norm1_in;
  Vector inv_rms1;
  Matrix x1;
  Matrix ff_pre;
  Matrix ff_h;
  Matrix ff_out;
  AdapterSiteCache ad_ffn;
  Matrix norm2_in;
  Vector inv_rms2;
  Matrix x2;
};

struct ForwardCache {
  Matrix embed;  // (B*L) x d
  std::vector<BlockCache> blocks;
  Matrix pooled;  // B x d
  Matrix logits;  // B x C
  TensorMap eff;  // effective weights of adapted matrices
};

// Logits for a batch; pass a cache to keep what backward needs.
Matrix forward(const ParameterSet& params, const AdapterSet& adapters,
               const Batch& batch, ForwardCache* cache = nullptr);

// Mean softmax cross-entropy and gradients for exactly the trainable
// tensors of the attached mode, keyed like collect_trainables. Gradients
// of adapted base matrices are routed to the pair: da = (beta/r) b^T G,
// db = (beta/r) G a^T with G the effective-weight gradient.
std::pair<double, TensorMap> loss_and_grads(const ParameterSet& params,
                                            const AdapterSet& adapters,
                                            const Batch& batch);

// w -= lr * g for every gradient key; frozen tensors are never touched.
void sgd_step(ParameterSet& params, AdapterSet& adapters,
              const TensorMap& grads, double lr);

struct OptimizerConfig {
  enum class Kind { kSgd, kAdamW };
  Kind kind = Kind::kSgd;
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Stateful wrapper; AdamW moments live here and are discarded with it.
class Optimizer {
 public:
  explicit Optimizer(const OptimizerConfig& config) : config_(config) {}
  void step(ParameterSet& params, AdapterSet& adapters,
            const TensorMap& grads);

 private:
  OptimizerConfig config_;
  long long t_ = 0;
  TensorMap m_;
  TensorMap v_;
};

struct EvalMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double loss = 0.0;
};

// Accuracy, unweighted mean per-class F1 (classes without true samples
// skipped) and mean cross-entropy over the dataset.
EvalMetrics evaluate(const ParameterSet& params, const AdapterSet& adapters,
                     const Dataset& dataset, Index batch_size = 64);

// Central finite differences (eps 1e-5) over every trainable scalar,
// sweeping all five modes on the given (small) configuration; returns the
// worst relative error.
double gradient_check(const ModelConfig& config, std::uint64_t seed);

}  // namespace fedlab
