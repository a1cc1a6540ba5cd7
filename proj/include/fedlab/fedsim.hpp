// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/adapters.hpp"
#include "fedlab/data.hpp"
#include "fedlab/model.hpp"
#include "fedlab/partition.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedlab {

struct FedConfig {
  int rounds = 100;
  int clients_per_round = 5;
  int local_epochs = 1;
  int batch_size = 16;
  double lr = 0.05;
  OptimizerConfig::Kind optimizer = OptimizerConfig::Kind::kSgd;
  AdapterMode mode;
  std::vector<std::string> targets;  // empty means w_q/w_v of every block
  int eval_every = 10;
  int snapshot_stride = 1;
  int threads = 1;
  bool kahan = false;
  std::uint64_t seed = 1;
  void validate(int num_clients) const;
};

struct RoundReport {
  int round = 0;
  bool evaluated = false;
  EvalMetrics metrics;
  long long uplink_bytes = 0;
  long long downlink_bytes = 0;
  double train_seconds = 0.0;
  double agg_seconds = 0.0;
  std::vector<int> selected;
};

struct GlobalState {
  int round = 0;
  ParameterSet params;
  AdapterSet adapters;
};

struct RunResult {
  GlobalState state;
  std::vector<RoundReport> reports;
  // Trainable tensors at round 0 and after every snapshot_stride-th round
  // (final round always included).
  std::vector<TensorMap> snapshots;
  std::vector<int> snapshot_rounds;
};

// Uniform subset without replacement, sorted ascending; the draw stream
// depends only on (seed, round).
std::vector<int> select_clients(std::uint64_t seed, int round,
                                int num_clients, int subset_size);

struct ClientUpdate {
  int client_id = 0;
  TensorMap trainables;
  long long num_samples = 0;
};

// Copies the global model, runs local_epochs of seeded mini-batch steps
// over the shard (final partial batch included) and returns the new
// trainables. The stream is a function of (seed, round, client) only, so
// results do not depend on scheduling.
ClientUpdate local_train(const ParameterSet& global_params,
                         const AdapterSet& global_adapters,
                         const Dataset& train, const ClientShard& shard,
                         const FedConfig& config, int round);

// Sample-count weighted mean, summed in ascending client-id order.
// Identical updates aggregate to themselves exactly.
TensorMap aggregate(const std::vector<ClientUpdate>& updates,
                    bool kahan = false);

// Bytes per direction per round at 32 bits per trainable scalar.
long long comm_cost(const AdapterMode& mode, const ModelConfig& config,
                    const std::vector<std::string>& targets, int subset_size);

// Full FedAvg loop starting from the given parameters (adapters are
// attached inside according to config.mode).
RunResult run(ParameterSet params, const Dataset& train, const Dataset& test,
              const std::vector<ClientShard>& shards, const FedConfig& config);

}  // namespace fedlab
