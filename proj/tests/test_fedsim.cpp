// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedlab/fedsim.hpp"
#include "fedlab/linalg.hpp"

#include <algorithm>
#include <cstddef>
#include <limits>
#include <set>
#include <vector>

using namespace fedlab;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.vocab_size = 30;
  cfg.seq_len = 4;
  cfg.embed_dim = 8;
  cfg.ffn_dim = 10;
  cfg.num_blocks = 1;
  cfg.num_classes = 3;
  return cfg;
}

Dataset tiny_dataset(const ModelConfig& cfg, std::uint64_t seed, int total) {
  SynthConfig s;
  s.num_classes = cfg.num_classes;
  s.samples_per_class = total / cfg.num_classes;
  s.vocab_size = cfg.vocab_size;
  s.seq_len = cfg.seq_len;
  s.signal_tokens_per_class = 3;
  s.seed = seed;
  return synth_generate(s);
}

double max_abs_diff(const TensorMap& a, const TensorMap& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (const auto& [name, m] : a) {
    REQUIRE(b.count(name) == 1);
    worst = std::max(worst, (m - b.at(name)).cwiseAbs().maxCoeff());
  }
  return worst;
}

ClientUpdate make_update(Rng& rng, int id, long long samples) {
  ClientUpdate u;
  u.client_id = id;
  u.num_samples = samples;
  u.trainables["w"] = gaussian_matrix(rng, 4, 3, 1.0);
  u.trainables["b"] = gaussian_matrix(rng, 5, 1, 1.0);
  return u;
}

}  // namespace

TEST_CASE("client selection is deterministic, sorted and in range") {
  const auto sel = select_clients(7, 3, 50, 8);
  REQUIRE(sel.size() == 8);
  CHECK(std::is_sorted(sel.begin(), sel.end()));
  CHECK(std::set<int>(sel.begin(), sel.end()).size() == sel.size());
  for (int id : sel) {
    CHECK(id >= 0);
    CHECK(id < 50);
  }
  CHECK(select_clients(7, 3, 50, 8) == sel);
  CHECK(select_clients(7, 4, 50, 8) != sel);
  CHECK(select_clients(8, 3, 50, 8) != sel);

  const auto all = select_clients(7, 1, 6, 6);
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4, 5});

  CHECK_THROWS_AS(select_clients(7, 1, 10, 0), ConfigError);
  CHECK_THROWS_AS(select_clients(7, 1, 10, 11), ConfigError);
}

TEST_CASE("every client is eventually selected") {
  std::set<int> seen;
  for (int round = 1; round <= 200; ++round)
    for (int id : select_clients(5, round, 20, 5)) seen.insert(id);
  CHECK(seen.size() == 20);
}

TEST_CASE("aggregation matches a directly computed weighted mean") {
  Rng rng(99);
  std::vector<ClientUpdate> updates;
  updates.push_back(make_update(rng, 0, 3));
  updates.push_back(make_update(rng, 1, 5));
  updates.push_back(make_update(rng, 2, 12));

  const TensorMap agg = aggregate(updates);
  for (const std::string name : {"w", "b"}) {
    const Matrix expected = (3.0 * updates[0].trainables.at(name) +
                             5.0 * updates[1].trainables.at(name) +
                             12.0 * updates[2].trainables.at(name)) /
                            20.0;
    CHECK((agg.at(name) - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  // input order must not matter
  std::vector<ClientUpdate> permuted = {updates[2], updates[0], updates[1]};
  CHECK(max_abs_diff(aggregate(permuted), agg) == 0.0);

  // compensated summation agrees to rounding error
  const TensorMap kahan = aggregate(updates, true);
  CHECK(max_abs_diff(kahan, agg) < 1e-12);
}

TEST_CASE("identical updates aggregate to themselves exactly") {
  Rng rng(17);
  ClientUpdate a = make_update(rng, 0, 7);
  ClientUpdate b = a;
  b.client_id = 1;
  b.num_samples = 13;
  ClientUpdate c = a;
  c.client_id = 2;
  c.num_samples = 1;

  for (bool kahan : {false, true}) {
    const TensorMap agg = aggregate({a, b, c}, kahan);
    CHECK(max_abs_diff(agg, a.trainables) == 0.0);
  }
}

TEST_CASE("aggregation rejects malformed update sets") {
  Rng rng(3);
  ClientUpdate a = make_update(rng, 0, 4);
  ClientUpdate b = make_update(rng, 1, 4);

  CHECK_THROWS_AS(aggregate({}), ConfigError);

  ClientUpdate zero = b;
  zero.num_samples = 0;
  CHECK_THROWS_AS(aggregate({a, zero}), ConfigError);

  ClientUpdate extra = b;
  extra.trainables["c"] = Matrix::Zero(1, 1);
  CHECK_THROWS_AS(aggregate({a, extra}), ConfigError);

  ClientUpdate renamed = b;
  renamed.trainables.erase("b");
  renamed.trainables["c"] = Matrix::Zero(5, 1);
  CHECK_THROWS_AS(aggregate({a, renamed}), ConfigError);

  ClientUpdate reshaped = b;
  reshaped.trainables.at("w") = Matrix::Zero(3, 4);
  CHECK_THROWS_AS(aggregate({a, reshaped}), ConfigError);
}

TEST_CASE("per-round traffic is 32 bits per trainable scalar per client") {
  const ModelConfig cfg = tiny_config();
  for (const AdapterMode mode :
       {AdapterMode::full_ft(), AdapterMode::bias_only(),
        AdapterMode::bottleneck(3), AdapterMode::lora(2, 2.0),
        AdapterMode::federa(2, 2.0)}) {
    const auto count = trainable_parameters(mode, cfg, default_targets(cfg));
    CHECK(comm_cost(mode, cfg, {}, 5) == 4LL * count.total * 5);
    CHECK(comm_cost(mode, cfg, {}, 1) ==
          comm_cost(mode, cfg, default_targets(cfg), 1));
  }
  CHECK(comm_cost(AdapterMode::lora(2, 2.0), cfg, {}, 3) ==
        comm_cost(AdapterMode::federa(2, 2.0), cfg, {}, 3));
  CHECK_THROWS_AS(comm_cost(AdapterMode::full_ft(), cfg, {}, 0), ConfigError);
}

TEST_CASE("local training is a function of seed, round and client only") {
  const ModelConfig cfg = tiny_config();
  const Dataset ds = tiny_dataset(cfg, 21, 48);
  PartitionConfig pc;
  pc.num_clients = 3;
  pc.alpha = 1.0;
  pc.seed = 21;
  const auto shards = partition(ds, pc);

  ParameterSet params = init_parameters(cfg, 21);
  FedConfig fc;
  fc.mode = AdapterMode::lora(2, 2.0);
  fc.batch_size = 8;
  fc.seed = 21;
  const AdapterSet adapters =
      attach_adapters(params, fc.mode, default_targets(cfg), fc.seed);

  const ClientUpdate u1 = local_train(params, adapters, ds, shards[1], fc, 4);
  CHECK(u1.client_id == 1);
  CHECK(u1.num_samples ==
        static_cast<long long>(shards[1].sample_indices.size()));
  CHECK(max_abs_diff(u1.trainables, collect_trainables(params, adapters)) >
        0.0);

  const ClientUpdate u2 = local_train(params, adapters, ds, shards[1], fc, 4);
  CHECK(max_abs_diff(u1.trainables, u2.trainables) == 0.0);

  const ClientUpdate other_round =
      local_train(params, adapters, ds, shards[1], fc, 5);
  CHECK(max_abs_diff(u1.trainables, other_round.trainables) > 0.0);

  ClientShard empty;
  empty.client_id = 9;
  CHECK_THROWS_AS(local_train(params, adapters, ds, empty, fc, 1), DataError);
}

TEST_CASE("one client, one round equals a plain training epoch") {
  const ModelConfig cfg = tiny_config();
  const Dataset train = tiny_dataset(cfg, 31, 60);
  const Dataset test = tiny_dataset(cfg, 32, 24);
  PartitionConfig pc;
  pc.num_clients = 1;
  pc.seed = 31;
  const auto shards = partition(train, pc);

  for (const AdapterMode mode :
       {AdapterMode::full_ft(), AdapterMode::federa(4, 4.0)}) {
    FedConfig fc;
    fc.rounds = 1;
    fc.clients_per_round = 1;
    fc.local_epochs = 2;
    fc.batch_size = 16;
    fc.lr = 0.05;
    fc.mode = mode;
    fc.eval_every = 1;
    fc.seed = 31;

    const ParameterSet start = init_parameters(cfg, 31);
    const RunResult result = run(start, train, test, shards, fc);
    REQUIRE(result.reports.size() == 1);
    CHECK(result.reports[0].selected == std::vector<int>{0});
    CHECK(result.reports[0].evaluated);
    REQUIRE(result.snapshot_rounds == std::vector<int>{0, 1});
    CHECK(result.state.round == 1);

    // the same epoch rebuilt outside the federated machinery
    ParameterSet params = start;
    AdapterSet adapters =
        attach_adapters(params, mode, default_targets(cfg), fc.seed);
    CHECK(max_abs_diff(result.snapshots[0],
                       collect_trainables(params, adapters)) == 0.0);
    Optimizer opt({fc.optimizer, fc.lr});
    Rng order_rng = Rng::derive(fc.seed, "local-order", 1, 0);
    std::vector<Index> order = shards[0].sample_indices;
    for (int epoch = 0; epoch < fc.local_epochs; ++epoch) {
      order_rng.shuffle(order.begin(), order.end());
      for (std::size_t s = 0; s < order.size();
           s += static_cast<std::size_t>(fc.batch_size)) {
        const std::size_t stop =
            std::min(order.size(), s + static_cast<std::size_t>(fc.batch_size));
        const std::vector<Index> rows(order.begin() + static_cast<long>(s),
                                      order.begin() + static_cast<long>(stop));
        const auto [loss, grads] =
            loss_and_grads(params, adapters, batch_from(train, rows));
        opt.step(params, adapters, grads);
      }
    }
    CHECK(max_abs_diff(result.snapshots.back(),
                       collect_trainables(params, adapters)) == 0.0);
  }
}

TEST_CASE("worker count does not change the result") {
  const ModelConfig cfg = tiny_config();
  const Dataset train = tiny_dataset(cfg, 41, 48);
  const Dataset test = tiny_dataset(cfg, 42, 24);
  PartitionConfig pc;
  pc.num_clients = 4;
  pc.alpha = 0.5;
  pc.seed = 41;
  const auto shards = partition(train, pc);

  FedConfig fc;
  fc.rounds = 3;
  fc.clients_per_round = 3;
  fc.batch_size = 8;
  fc.mode = AdapterMode::lora(2, 2.0);
  fc.eval_every = 1;
  fc.seed = 41;
  const ParameterSet start = init_parameters(cfg, 41);

  fc.threads = 1;
  const RunResult r1 = run(start, train, test, shards, fc);
  fc.threads = 2;
  const RunResult r2 = run(start, train, test, shards, fc);

  REQUIRE(r1.reports.size() == r2.reports.size());
  for (std::size_t i = 0; i < r1.reports.size(); ++i) {
    CHECK(r1.reports[i].selected == r2.reports[i].selected);
    CHECK(r1.reports[i].metrics.accuracy == r2.reports[i].metrics.accuracy);
    CHECK(r1.reports[i].metrics.macro_f1 == r2.reports[i].metrics.macro_f1);
    CHECK(r1.reports[i].metrics.loss == r2.reports[i].metrics.loss);
    CHECK(r1.reports[i].uplink_bytes == r2.reports[i].uplink_bytes);
  }
  REQUIRE(r1.snapshots.size() == r2.snapshots.size());
  for (std::size_t i = 0; i < r1.snapshots.size(); ++i)
    CHECK(max_abs_diff(r1.snapshots[i], r2.snapshots[i]) == 0.0);
}

TEST_CASE("evaluation and snapshot cadence") {
  const ModelConfig cfg = tiny_config();
  const Dataset train = tiny_dataset(cfg, 51, 48);
  const Dataset test = tiny_dataset(cfg, 52, 24);
  PartitionConfig pc;
  pc.num_clients = 4;
  pc.seed = 51;
  const auto shards = partition(train, pc);

  FedConfig fc;
  fc.rounds = 7;
  fc.clients_per_round = 2;
  fc.batch_size = 8;
  fc.mode = AdapterMode::lora(2, 2.0);
  fc.eval_every = 3;
  fc.snapshot_stride = 2;
  fc.seed = 51;

  const RunResult result =
      run(init_parameters(cfg, 51), train, test, shards, fc);
  REQUIRE(result.reports.size() == 7);
  std::vector<int> evaluated;
  for (const auto& r : result.reports) {
    if (r.evaluated) evaluated.push_back(r.round);
    CHECK(r.uplink_bytes == comm_cost(fc.mode, cfg, {}, 2));
    CHECK(r.downlink_bytes == r.uplink_bytes);
    CHECK(static_cast<int>(r.selected.size()) == 2);
  }
  CHECK(evaluated == std::vector<int>{3, 6, 7});
  CHECK(result.snapshot_rounds == std::vector<int>{0, 2, 4, 6, 7});
  CHECK(result.snapshots.size() == result.snapshot_rounds.size());
}

TEST_CASE("federated config validation") {
  FedConfig fc;
  fc.mode = AdapterMode::lora(2, 2.0);
  CHECK_NOTHROW(fc.validate(20));

  auto expect_throw = [](FedConfig bad, int clients = 20) {
    CHECK_THROWS_AS(bad.validate(clients), ConfigError);
  };
  FedConfig bad = fc;
  bad.rounds = 0;
  expect_throw(bad);
  bad = fc;
  bad.clients_per_round = 0;
  expect_throw(bad);
  bad = fc;
  bad.clients_per_round = 21;
  expect_throw(bad);
  bad = fc;
  bad.local_epochs = 0;
  expect_throw(bad);
  bad = fc;
  bad.batch_size = 0;
  expect_throw(bad);
  bad = fc;
  bad.lr = 0.0;
  expect_throw(bad);
  bad = fc;
  bad.eval_every = 0;
  expect_throw(bad);
  bad = fc;
  bad.snapshot_stride = 0;
  expect_throw(bad);
  bad = fc;
  bad.threads = 0;
  expect_throw(bad);
  bad = fc;
  bad.mode.rank = 0;
  expect_throw(bad);
}

TEST_CASE("run rejects inconsistent inputs") {
  const ModelConfig cfg = tiny_config();
  const Dataset train = tiny_dataset(cfg, 61, 24);
  const Dataset test = tiny_dataset(cfg, 62, 12);
  PartitionConfig pc;
  pc.num_clients = 2;
  pc.seed = 61;
  auto shards = partition(train, pc);

  FedConfig fc;
  fc.rounds = 1;
  fc.clients_per_round = 2;
  fc.mode = AdapterMode::full_ft();
  fc.seed = 61;

  CHECK_THROWS_AS(run(init_parameters(cfg, 61), train, test, {}, fc),
                  ConfigError);

  auto reversed = shards;
  std::swap(reversed[0], reversed[1]);
  CHECK_THROWS_AS(run(init_parameters(cfg, 61), train, test, reversed, fc),
                  ConfigError);

  Dataset empty;
  empty.tokens.resize(0, cfg.seq_len);
  empty.num_classes = cfg.num_classes;
  empty.vocab_size = cfg.vocab_size;
  CHECK_THROWS_AS(run(init_parameters(cfg, 61), train, empty, shards, fc),
                  DataError);
}

TEST_CASE("worker failures keep their error category") {
  const ModelConfig cfg = tiny_config();
  const Dataset train = tiny_dataset(cfg, 71, 24);
  const Dataset test = tiny_dataset(cfg, 72, 12);
  PartitionConfig pc;
  pc.num_clients = 3;
  pc.seed = 71;
  auto shards = partition(train, pc);

  FedConfig fc;
  fc.rounds = 1;
  fc.clients_per_round = 3;
  fc.batch_size = 8;
  fc.mode = AdapterMode::full_ft();
  fc.threads = 2;
  fc.seed = 71;

  auto holed = shards;
  holed[1].sample_indices.clear();
  CHECK_THROWS_AS(run(init_parameters(cfg, 71), train, test, holed, fc),
                  DataError);

  ParameterSet poisoned = init_parameters(cfg, 71);
  poisoned.at("w_cls").setConstant(std::numeric_limits<double>::infinity());
  CHECK_THROWS_AS(run(poisoned, train, test, shards, fc), NumericError);
}
