// SPDX-License-Identifier: Apache-2.0
#include "fedlab/fedsim.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>

namespace fedlab {

void FedConfig::validate(int num_clients) const {
  if (rounds < 1) throw ConfigError("fed config: rounds must be >= 1");
  if (clients_per_round < 1 || clients_per_round > num_clients)
    throw ConfigError("fed config: clients_per_round must be in [1, clients]");
  if (local_epochs < 1) throw ConfigError("fed config: local_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("fed config: batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("fed config: lr must be positive");
  if (eval_every < 1) throw ConfigError("fed config: eval_every must be >= 1");
  if (snapshot_stride < 1)
    throw ConfigError("fed config: snapshot_stride must be >= 1");
  if (threads < 1) throw ConfigError("fed config: threads must be >= 1");
  mode.validate();
}

std::vector<int> select_clients(std::uint64_t seed, int round,
                                int num_clients, int subset_size) {
  if (subset_size < 1 || subset_size > num_clients)
    throw ConfigError("select_clients: subset size out of range");
  Rng rng = Rng::derive(seed, "select", static_cast<std::uint64_t>(round));
  std::vector<int> ids(static_cast<std::size_t>(num_clients));
  std::iota(ids.begin(), ids.end(), 0);
  // Partial Fisher-Yates: the first subset_size slots become the sample.
  for (int i = 0; i < subset_size; ++i) {
    const auto j =
        i + static_cast<int>(rng.next_below(
                static_cast<std::uint64_t>(num_clients - i)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  ids.resize(static_cast<std::size_t>(subset_size));
  std::sort(ids.begin(), ids.end());
  return ids;
}

ClientUpdate local_train(const ParameterSet& global_params,
                         const AdapterSet& global_adapters,
                         const Dataset& train, const ClientShard& shard,
                         const FedConfig& config, int round) {
  if (shard.sample_indices.empty())
    throw DataError("local_train: empty shard for client " +
                    std::to_string(shard.client_id));

  ParameterSet params = global_params;
  AdapterSet adapters = global_adapters;
  Optimizer opt({config.optimizer, config.lr});

  Rng order_rng = Rng::derive(config.seed, "local-order",
                              static_cast<std::uint64_t>(round),
                              static_cast<std::uint64_t>(shard.client_id));
  std::vector<Index> order = shard.sample_indices;
  for (int epoch = 0; epoch < config.local_epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::vector<Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto [loss, grads] = loss_and_grads(params, adapters,
                                                batch_from(train, rows));
      if (!std::isfinite(loss))
        throw NumericError("local_train: loss diverged on client " +
                           std::to_string(shard.client_id));
      opt.step(params, adapters, grads);
    }
  }

  ClientUpdate update;
  update.client_id = shard.client_id;
  update.trainables = collect_trainables(params, adapters);
  update.num_samples = static_cast<long long>(shard.sample_indices.size());
  return update;
}

TensorMap aggregate(const std::vector<ClientUpdate>& updates, bool kahan) {
  if (updates.empty()) throw ConfigError("aggregate: no updates");
  std::vector<const ClientUpdate*> ordered;
  ordered.reserve(updates.size());
  for (const auto& u : updates) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) {
              return a->client_id < b->client_id;
            });

  double total = 0.0;
  for (const auto* u : ordered) {
    if (u->num_samples < 1)
      throw ConfigError("aggregate: update with no samples");
    total += static_cast<double>(u->num_samples);
  }

  const TensorMap& first = ordered.front()->trainables;
  for (const auto* u : ordered) {
    if (u->trainables.size() != first.size())
      throw ConfigError("aggregate: tensor sets differ");
    for (const auto& [name, t] : u->trainables) {
      const auto it = first.find(name);
      if (it == first.end() || it->second.rows() != t.rows() ||
          it->second.cols() != t.cols())
        throw ConfigError("aggregate: shape mismatch for " + name);
    }
  }

  // Weighted mean in deviation form, x1 + sum_i w_i (x_i - x1): identical
  // updates come back bit-identical regardless of the weights.
  TensorMap out = first;
  for (auto& [name, acc] : out) {
    if (!kahan) {
      for (const auto* u : ordered) {
        const double w = static_cast<double>(u->num_samples) / total;
        acc += w * (u->trainables.at(name) - first.at(name));
      }
      continue;
    }
    Matrix comp = Matrix::Zero(acc.rows(), acc.cols());
    for (const auto* u : ordered) {
      const double w = static_cast<double>(u->num_samples) / total;
      const Matrix term = w * (u->trainables.at(name) - first.at(name));
      for (Index i = 0; i < acc.rows(); ++i) {
        for (Index j = 0; j < acc.cols(); ++j) {
          const double y = term(i, j) - comp(i, j);
          const double t = acc(i, j) + y;
          comp(i, j) = (t - acc(i, j)) - y;
          acc(i, j) = t;
        }
      }
    }
  }
  return out;
}

long long comm_cost(const AdapterMode& mode, const ModelConfig& config,
                    const std::vector<std::string>& targets, int subset_size) {
  if (subset_size < 1) throw ConfigError("comm_cost: subset size must be >= 1");
  const auto resolved = targets.empty() ? default_targets(config) : targets;
  const auto count = trainable_parameters(mode, config, resolved);
  return 4LL * count.total * subset_size;
}

namespace {

enum class ErrKind { kConfig, kData, kNumeric, kOther };

struct WorkerFailure {
  bool failed = false;
  ErrKind kind = ErrKind::kOther;
  std::string message;
};

[[noreturn]] void rethrow(const WorkerFailure& f) {
  switch (f.kind) {
    case ErrKind::kConfig: throw ConfigError(f.message);
    case ErrKind::kData: throw DataError(f.message);
    case ErrKind::kNumeric: throw NumericError(f.message);
    default: throw std::runtime_error(f.message);
  }
}

}  // namespace

RunResult run(ParameterSet params, const Dataset& train, const Dataset& test,
              const std::vector<ClientShard>& shards, const FedConfig& config) {
  const int num_clients = static_cast<int>(shards.size());
  if (num_clients == 0) throw ConfigError("run: no shards");
  config.validate(num_clients);
  if (train.size() == 0 || test.size() == 0)
    throw DataError("run: empty train or test set");
  for (int i = 0; i < num_clients; ++i)
    if (shards[static_cast<std::size_t>(i)].client_id != i)
      throw ConfigError("run: shard ids must be 0..N-1 in order");

  const std::vector<std::string> targets =
      config.targets.empty() ? default_targets(params.config) : config.targets;
  AdapterSet adapters =
      attach_adapters(params, config.mode, targets, config.seed);

  RunResult result;
  result.snapshots.push_back(collect_trainables(params, adapters));
  result.snapshot_rounds.push_back(0);

  const long long bytes_per_direction =
      comm_cost(config.mode, params.config, targets, config.clients_per_round);

  using clock = std::chrono::steady_clock;
  for (int round = 1; round <= config.rounds; ++round) {
    RoundReport report;
    report.round = round;
    report.selected = select_clients(config.seed, round, num_clients,
                                     config.clients_per_round);
    report.downlink_bytes = bytes_per_direction;
    report.uplink_bytes = bytes_per_direction;

    std::vector<ClientUpdate> updates(report.selected.size());
    const auto t0 = clock::now();
    const int workers = std::min<int>(config.threads,
                                      static_cast<int>(report.selected.size()));
    WorkerFailure failure;
    if (workers <= 1) {
      for (std::size_t i = 0; i < report.selected.size(); ++i)
        updates[i] = local_train(
            params, adapters, train,
            shards[static_cast<std::size_t>(report.selected[i])], config,
            round);
    } else {
      std::atomic<std::size_t> next{0};
      std::mutex mu;
      auto body = [&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= report.selected.size()) return;
          try {
            updates[i] = local_train(
                params, adapters, train,
                shards[static_cast<std::size_t>(report.selected[i])], config,
                round);
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(mu);
            if (!failure.failed) {
              failure.failed = true;
              failure.message = "round " + std::to_string(round) + ", client " +
                                std::to_string(report.selected[i]) + ": " +
                                e.what();
              if (dynamic_cast<const ConfigError*>(&e)) failure.kind = ErrKind::kConfig;
              else if (dynamic_cast<const DataError*>(&e)) failure.kind = ErrKind::kData;
              else if (dynamic_cast<const NumericError*>(&e)) failure.kind = ErrKind::kNumeric;
            }
          }
        }
      };
      std::vector<std::thread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(body);
      for (auto& th : pool) th.join();
      if (failure.failed) rethrow(failure);
    }
    const auto t1 = clock::now();
    report.train_seconds =
        std::chrono::duration<double>(t1 - t0).count();

    const TensorMap agg = aggregate(updates, config.kahan);
    apply_trainables(params, adapters, agg);
    report.agg_seconds =
        std::chrono::duration<double>(clock::now() - t1).count();

    if (round % config.eval_every == 0 || round == config.rounds) {
      report.evaluated = true;
      report.metrics = evaluate(params, adapters, test);
    }
    if (round % config.snapshot_stride == 0 || round == config.rounds) {
      result.snapshots.push_back(collect_trainables(params, adapters));
      result.snapshot_rounds.push_back(round);
    }
    result.reports.push_back(std::move(report));
  }

  result.state.round = config.rounds;
  result.state.params = std::move(params);
  result.state.adapters = std::move(adapters);
  return result;
}

}  // namespace fedlab
