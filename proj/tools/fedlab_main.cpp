// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner: generate | pretrain | partition | run | drift | report.
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.
#include "fedlab/data.hpp"
#include "fedlab/drift.hpp"
#include "fedlab/fedsim.hpp"
#include "fedlab/io.hpp"
#include "fedlab/linalg.hpp"
#include "fedlab/model.hpp"
#include "fedlab/partition.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fedlab;

namespace {

struct Options {
  std::uint64_t seed = 1;
  std::string out = "out";
  int threads = 1;

  // data
  SynthConfig synth;
  bool classes_given = false;
  std::string from_jsonl;
  std::string from_csv;
  double test_fraction = 0.2;
  std::string data_path;

  // model
  int embed_dim = 32;
  int ffn_dim = 64;
  int num_blocks = 1;

  // pretrain
  int pretrain_epochs = 30;
  double pretrain_lr = 0.5;
  bool pretrain_skip = false;
  std::string checkpoint_path;

  // partition
  int clients = 20;
  double alpha = 1.0;
  std::string shards_path;

  // federated run
  std::string mode = "federa";
  int rank = 0;  // 0 = min(32, smallest target dimension)
  double beta = 0.0;  // 0 = equal to rank
  int bottleneck_dim = 8;
  std::vector<std::string> targets;
  int rounds = 100;
  int clients_per_round = 5;
  int local_epochs = 1;
  int batch_size = 16;
  double lr = 0.05;
  std::string optimizer = "sgd";
  int eval_every = 10;
  int snapshot_stride = 1;
  bool kahan = false;

  // drift
  std::string run_dir;
  std::vector<std::string> drift_tensors;

  // report
  std::vector<std::string> report_dirs;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

OptimizerConfig::Kind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerConfig::Kind::kSgd;
  if (name == "adamw") return OptimizerConfig::Kind::kAdamW;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adamw)");
}

// ---- dataset helpers ------------------------------------------------------

Dataset load_or_fail(const std::string& path) {
  if (path.empty()) throw ConfigError("no dataset path given (--data)");
  return load_dataset(path);
}

ModelConfig model_config_for(const Options& opt, const Dataset& ds) {
  ModelConfig cfg;
  cfg.vocab_size = ds.vocab_size;
  cfg.seq_len = static_cast<int>(ds.seq_len());
  cfg.num_classes = ds.num_classes;
  cfg.embed_dim = opt.embed_dim;
  cfg.ffn_dim = opt.ffn_dim;
  cfg.num_blocks = opt.num_blocks;
  cfg.validate();
  return cfg;
}

json model_config_json(const ModelConfig& cfg) {
  return {{"vocab_size", cfg.vocab_size}, {"seq_len", cfg.seq_len},
          {"embed_dim", cfg.embed_dim},   {"ffn_dim", cfg.ffn_dim},
          {"num_blocks", cfg.num_blocks}, {"num_classes", cfg.num_classes}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.seq_len = j.at("seq_len").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.num_blocks = j.at("num_blocks").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& bin_path, const ParameterSet& params,
                     const json& extra) {
  save_tensors(bin_path, params.tensors);
  json side;
  side["format"] = "fedlab-checkpoint";
  side["version"] = 1;
  side["model"] = model_config_json(params.config);
  for (const auto& [k, v] : extra.items()) side[k] = v;
  const std::string side_path =
      fs::path(bin_path).replace_extension(".json").string();
  std::ofstream out(side_path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + side_path);
  out << side.dump(2) << '\n';
}

ParameterSet load_checkpoint(const std::string& bin_path) {
  const std::string side_path =
      fs::path(bin_path).replace_extension(".json").string();
  std::ifstream in(side_path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint sidecar: " + side_path);
  json side;
  try {
    in >> side;
  } catch (const json::parse_error& e) {
    throw DataError(side_path + ": " + e.what());
  }
  if (side.value("format", "") != "fedlab-checkpoint")
    throw DataError(side_path + ": not a checkpoint sidecar");
  ParameterSet params;
  params.config = model_config_from_json(side.at("model"));
  params.tensors = load_tensors(bin_path);

  // shape audit against the declared configuration
  const auto specs = param_shapes(params.config);
  if (params.tensors.size() != specs.size())
    throw DataError(bin_path + ": tensor count does not match model config");
  for (const auto& spec : specs) {
    const auto it = params.tensors.find(spec.name);
    if (it == params.tensors.end())
      throw DataError(bin_path + ": missing tensor " + spec.name);
    if (it->second.rows() != spec.rows || it->second.cols() != spec.cols)
      throw DataError(bin_path + ": shape mismatch for " + spec.name);
  }
  return params;
}

// Fresh task head on top of (possibly pretrained) features, sized for the
// current class count.
void reinit_head(ParameterSet& params, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "head-init");
  params.at("w_cls") = gaussian_matrix(rng, params.config.embed_dim,
                                       params.config.num_classes, 0.08);
  params.at("b_cls") = Matrix::Zero(params.config.num_classes, 1);
}

// ---- commands -------------------------------------------------------------

int cmd_generate(const Options& opt) {
  ensure_dir(opt.out);
  Dataset ds;
  // unless --classes was given, ingested files infer their label count
  const int declared = opt.classes_given ? opt.synth.num_classes : 0;
  if (!opt.from_jsonl.empty()) {
    ds = load_jsonl(opt.from_jsonl, opt.synth.vocab_size, opt.synth.seq_len,
                    declared);
  } else if (!opt.from_csv.empty()) {
    ds = load_csv(opt.from_csv, opt.synth.vocab_size, opt.synth.seq_len,
                  declared);
  } else {
    SynthConfig cfg = opt.synth;
    cfg.seed = opt.seed;
    ds = synth_generate(cfg);
  }
  ds.validate();
  const std::string path = (fs::path(opt.out) / "dataset.json").string();
  save_dataset(path, ds);
  std::cout << "wrote " << path << " (" << ds.size() << " samples, "
            << ds.num_classes << " classes)\n";
  return 0;
}

int cmd_pretrain(const Options& opt) {
  ensure_dir(opt.out);
  const Dataset ds = load_or_fail(opt.data_path);
  const ModelConfig cfg = model_config_for(opt, ds);
  ParameterSet params = init_parameters(cfg, opt.seed);
  AdapterSet adapters =
      attach_adapters(params, AdapterMode::full_ft(), {}, opt.seed);

  if (opt.pretrain_skip) {
    std::cerr << "warning: --skip given, writing random-init checkpoint\n";
  } else {
    Optimizer optim({parse_optimizer(opt.optimizer), opt.pretrain_lr});
    Rng order_rng = Rng::derive(opt.seed, "pretrain-order");
    std::vector<Index> order(static_cast<std::size_t>(ds.size()));
    std::iota(order.begin(), order.end(), Index{0});
    for (int epoch = 1; epoch <= opt.pretrain_epochs; ++epoch) {
      order_rng.shuffle(order.begin(), order.end());
      double loss_sum = 0.0;
      long long steps = 0;
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(opt.batch_size)) {
        const std::size_t stop = std::min(
            order.size(), start + static_cast<std::size_t>(opt.batch_size));
        const std::vector<Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                      order.begin() + static_cast<std::ptrdiff_t>(stop));
        const auto [loss, grads] =
            loss_and_grads(params, adapters, batch_from(ds, rows));
        if (!std::isfinite(loss))
          throw NumericError("pretraining diverged at epoch " +
                             std::to_string(epoch) + ", step " +
                             std::to_string(steps) + " (loss not finite)");
        optim.step(params, adapters, grads);
        loss_sum += loss;
        ++steps;
      }
      if (epoch % 5 == 0 || epoch == opt.pretrain_epochs) {
        const EvalMetrics m = evaluate(params, adapters, ds);
        std::cout << "epoch " << epoch << ": mean batch loss "
                  << loss_sum / static_cast<double>(steps)
                  << ", train accuracy " << m.accuracy << "\n";
      }
    }
  }

  const EvalMetrics final_metrics = evaluate(params, adapters, ds);
  const std::string path = opt.checkpoint_path.empty()
                               ? (fs::path(opt.out) / "checkpoint.bin").string()
                               : opt.checkpoint_path;
  save_checkpoint(path, params,
                  {{"seed", opt.seed},
                   {"epochs", opt.pretrain_skip ? 0 : opt.pretrain_epochs},
                   {"train_accuracy", final_metrics.accuracy}});
  std::cout << "wrote " << path << " (train accuracy "
            << final_metrics.accuracy << ")\n";
  return 0;
}

int cmd_partition(const Options& opt) {
  ensure_dir(opt.out);
  const Dataset ds = load_or_fail(opt.data_path);
  const auto [train, test] = train_test_split(ds, opt.test_fraction, opt.seed);
  PartitionConfig cfg;
  cfg.num_clients = opt.clients;
  cfg.alpha = opt.alpha;
  cfg.seed = opt.seed;
  const auto shards = partition(train, cfg);
  save_shards((fs::path(opt.out) / "shards.json").string(), shards);
  const auto [js, mean_js] = heterogeneity_matrix(shards);
  save_js_matrix_csv((fs::path(opt.out) / "js_matrix.csv").string(), js);
  std::cout << "partitioned " << train.size() << " training samples into "
            << shards.size() << " shards (alpha " << opt.alpha
            << ", mean pairwise JS " << mean_js << ")\n";
  return 0;
}

void write_rounds_csv(const std::string& path,
                      const std::vector<RoundReport>& reports) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  // wall-clock timing stays out of this file so reruns compare byte for
  // byte; per-round timings are aggregated into summary.json instead
  out << "round,accuracy,macro_f1,loss,uplink_bytes,downlink_bytes\n";
  for (const auto& r : reports) {
    out << r.round << ',';
    if (r.evaluated)
      out << format_g17(r.metrics.accuracy) << ','
          << format_g17(r.metrics.macro_f1) << ','
          << format_g17(r.metrics.loss) << ',';
    else
      out << ",,,";
    out << r.uplink_bytes << ',' << r.downlink_bytes << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

int cmd_run(const Options& opt) {
  ensure_dir(opt.out);
  const auto wall_start = std::chrono::steady_clock::now();

  Dataset ds;
  if (!opt.data_path.empty()) {
    ds = load_dataset(opt.data_path);
  } else {
    SynthConfig cfg = opt.synth;
    cfg.seed = opt.seed;
    ds = synth_generate(cfg);
  }
  const auto [train, test] = train_test_split(ds, opt.test_fraction, opt.seed);

  ParameterSet params;
  if (!opt.checkpoint_path.empty()) {
    params = load_checkpoint(opt.checkpoint_path);
    if (params.config.vocab_size != ds.vocab_size ||
        params.config.seq_len != ds.seq_len())
      throw ConfigError("checkpoint model does not fit the dataset");
    // the head is re-initialized below, so the class count may differ
    params.config.num_classes = ds.num_classes;
  } else {
    std::cerr << "warning: no checkpoint given, starting from random init\n";
    params = init_parameters(model_config_for(opt, ds), opt.seed);
  }
  reinit_head(params, opt.seed);

  std::vector<ClientShard> shards;
  if (!opt.shards_path.empty()) {
    shards = load_shards(opt.shards_path, train);
  } else {
    PartitionConfig pcfg;
    pcfg.num_clients = opt.clients;
    pcfg.alpha = opt.alpha;
    pcfg.seed = opt.seed;
    shards = partition(train, pcfg);
    save_shards((fs::path(opt.out) / "shards.json").string(), shards);
    const auto [js, mean_js] = heterogeneity_matrix(shards);
    save_js_matrix_csv((fs::path(opt.out) / "js_matrix.csv").string(), js);
  }

  // resolve adapter mode
  int rank = opt.rank;
  if (rank == 0) {
    Index smallest = std::min(params.config.embed_dim, params.config.embed_dim);
    const auto resolved_targets = opt.targets.empty()
                                      ? default_targets(params.config)
                                      : opt.targets;
    for (const auto& t : resolved_targets) {
      const Matrix& w = params.at(t);
      smallest = std::min(smallest, std::min(w.rows(), w.cols()));
    }
    rank = static_cast<int>(std::min<Index>(32, smallest));
  }
  const double beta = opt.beta == 0.0 ? static_cast<double>(rank) : opt.beta;
  const AdapterMode mode =
      AdapterMode::parse(opt.mode, rank, beta, opt.bottleneck_dim);

  FedConfig fed;
  fed.rounds = opt.rounds;
  fed.clients_per_round = opt.clients_per_round;
  fed.local_epochs = opt.local_epochs;
  fed.batch_size = opt.batch_size;
  fed.lr = opt.lr;
  fed.optimizer = parse_optimizer(opt.optimizer);
  fed.mode = mode;
  fed.targets = opt.targets;
  fed.eval_every = opt.eval_every;
  fed.snapshot_stride = opt.snapshot_stride;
  fed.threads = opt.threads;
  fed.kahan = opt.kahan;
  fed.seed = opt.seed;

  RunResult result = run(std::move(params), train, test, shards, fed);

  write_rounds_csv((fs::path(opt.out) / "rounds.csv").string(), result.reports);

  const std::string snap_dir = (fs::path(opt.out) / "snapshots").string();
  ensure_dir(snap_dir);
  for (std::size_t i = 0; i < result.snapshots.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "round_%04d.bin",
                  result.snapshot_rounds[i]);
    save_tensors((fs::path(snap_dir) / name).string(), result.snapshots[i]);
  }

  // summary: resolved config echo, final metrics, totals, time-to-target
  json summary;
  json cfg;
  cfg["seed"] = opt.seed;
  cfg["out"] = opt.out;
  cfg["threads"] = opt.threads;
  cfg["data"] = opt.data_path;
  cfg["checkpoint"] = opt.checkpoint_path;
  cfg["shards"] = opt.shards_path;
  cfg["test_fraction"] = opt.test_fraction;
  cfg["clients"] = static_cast<int>(shards.size());
  cfg["alpha"] = opt.alpha;
  cfg["mode"] = mode.name();
  cfg["rank"] = rank;
  cfg["beta"] = beta;
  cfg["bottleneck_dim"] = opt.bottleneck_dim;
  cfg["targets"] = fed.targets.empty()
                       ? default_targets(result.state.params.config)
                       : fed.targets;
  cfg["rounds"] = fed.rounds;
  cfg["clients_per_round"] = fed.clients_per_round;
  cfg["local_epochs"] = fed.local_epochs;
  cfg["batch_size"] = fed.batch_size;
  cfg["lr"] = fed.lr;
  cfg["optimizer"] = opt.optimizer;
  cfg["eval_every"] = fed.eval_every;
  cfg["snapshot_stride"] = fed.snapshot_stride;
  cfg["kahan"] = fed.kahan;
  cfg["model"] = model_config_json(result.state.params.config);
  summary["config"] = std::move(cfg);

  const RoundReport& last = result.reports.back();
  summary["final"] = {{"round", last.round},
                      {"accuracy", last.metrics.accuracy},
                      {"macro_f1", last.metrics.macro_f1},
                      {"loss", last.metrics.loss}};

  long long up = 0, down = 0;
  double train_s = 0.0, agg_s = 0.0;
  for (const auto& r : result.reports) {
    up += r.uplink_bytes;
    down += r.downlink_bytes;
    train_s += r.train_seconds;
    agg_s += r.agg_seconds;
  }
  summary["bytes"] = {{"uplink_total", up},
                      {"downlink_total", down},
                      {"per_round_each_direction",
                       result.reports.front().uplink_bytes}};
  summary["timing"] = {
      {"train_seconds_total", train_s},
      {"agg_seconds_total", agg_s},
      {"wall_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                     wall_start)
           .count()}};

  json targets_list = json::array();
  double cumulative = 0.0;
  std::map<int, double> cum_by_round;
  for (const auto& r : result.reports) {
    cumulative += r.train_seconds + r.agg_seconds;
    cum_by_round[r.round] = cumulative;
  }
  for (const double target : {0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95}) {
    json row;
    row["target_accuracy"] = target;
    row["round"] = nullptr;
    row["seconds"] = nullptr;
    for (const auto& r : result.reports) {
      if (r.evaluated && r.metrics.accuracy >= target) {
        row["round"] = r.round;
        row["seconds"] = cum_by_round[r.round];
        break;
      }
    }
    targets_list.push_back(std::move(row));
  }
  summary["time_to_target"] = std::move(targets_list);
  summary["snapshot_rounds"] = result.snapshot_rounds;

  const std::string summary_path = (fs::path(opt.out) / "summary.json").string();
  std::ofstream sout(summary_path, std::ios::binary);
  if (!sout) throw DataError("cannot open for writing: " + summary_path);
  sout << summary.dump(2) << '\n';

  std::cout << "mode " << mode.name() << ", alpha " << opt.alpha << ": final accuracy "
            << last.metrics.accuracy << " after " << last.round << " rounds\n";
  return 0;
}

int cmd_drift(const Options& opt) {
  if (opt.run_dir.empty()) throw ConfigError("drift: --run DIR is required");
  const fs::path snap_dir = fs::path(opt.run_dir) / "snapshots";
  if (!fs::exists(snap_dir))
    throw DataError("no snapshots directory in " + opt.run_dir);

  std::vector<std::pair<int, std::string>> files;
  for (const auto& entry : fs::directory_iterator(snap_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("round_", 0) != 0 || entry.path().extension() != ".bin")
      continue;
    files.emplace_back(std::stoi(name.substr(6)), entry.path().string());
  }
  if (files.size() < 2)
    throw DataError("need at least 2 snapshots in " + snap_dir.string());
  std::sort(files.begin(), files.end());

  std::vector<TensorMap> snapshots;
  std::vector<int> rounds;
  for (const auto& [round, path] : files) {
    snapshots.push_back(load_tensors(path));
    rounds.push_back(round);
  }

  std::vector<std::string> names = opt.drift_tensors;
  if (names.empty()) {
    for (const auto& [name, t] : snapshots.front())
      if (name.find(".lora_") != std::string::npos) names.push_back(name);
    if (names.empty())
      throw ConfigError(
          "no low-rank tensors in snapshots; pass --tensors explicitly");
  }

  const auto series = drift_series(snapshots, names);
  const std::vector<int> later_rounds(rounds.begin() + 1, rounds.end());
  const fs::path out_dir = fs::path(opt.run_dir) / "drift";
  ensure_dir(out_dir.string());
  for (const auto& [name, s] : series) {
    const std::string path = (out_dir / (name + ".csv")).string();
    save_drift_csv(path, s, later_rounds);
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

int cmd_report(const Options& opt) {
  if (opt.report_dirs.empty())
    throw ConfigError("report: give at least one run directory");
  ensure_dir(opt.out);

  struct RunInfo {
    std::string dir;
    json summary;
  };
  std::vector<RunInfo> runs;
  for (const auto& dir : opt.report_dirs) {
    const std::string path = (fs::path(dir) / "summary.json").string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path);
    RunInfo info;
    info.dir = dir;
    try {
      in >> info.summary;
    } catch (const json::parse_error& e) {
      throw DataError(path + ": " + e.what());
    }
    runs.push_back(std::move(info));
  }

  std::set<std::string> model_shapes;
  for (const auto& r : runs)
    model_shapes.insert(r.summary.at("config").at("model").dump());
  if (model_shapes.size() > 1)
    std::cerr << "warning: runs use different model configurations\n";

  const std::string cmp_path = (fs::path(opt.out) / "comparison.csv").string();
  std::ofstream cmp(cmp_path, std::ios::binary);
  if (!cmp) throw DataError("cannot open for writing: " + cmp_path);
  cmp << "run,mode,alpha,seed,rounds,final_accuracy,final_macro_f1,final_loss,"
         "uplink_bytes_total,embed_dim,num_blocks\n";
  for (const auto& r : runs) {
    const auto& cfg = r.summary.at("config");
    const auto& fin = r.summary.at("final");
    cmp << r.dir << ',' << cfg.at("mode").get<std::string>() << ','
        << format_g17(cfg.at("alpha").get<double>()) << ','
        << cfg.at("seed").get<std::uint64_t>() << ','
        << cfg.at("rounds").get<int>() << ','
        << format_g17(fin.at("accuracy").get<double>()) << ','
        << format_g17(fin.at("macro_f1").get<double>()) << ','
        << format_g17(fin.at("loss").get<double>()) << ','
        << r.summary.at("bytes").at("uplink_total").get<long long>() << ','
        << cfg.at("model").at("embed_dim").get<int>() << ','
        << cfg.at("model").at("num_blocks").get<int>() << '\n';
  }
  cmp.close();

  // long-format merged accuracy curves from each run's rounds.csv
  const std::string acc_path =
      (fs::path(opt.out) / "accuracy_by_round.csv").string();
  std::ofstream acc(acc_path, std::ios::binary);
  if (!acc) throw DataError("cannot open for writing: " + acc_path);
  acc << "run,round,accuracy\n";
  for (const auto& r : runs) {
    const std::string rounds_path = (fs::path(r.dir) / "rounds.csv").string();
    std::ifstream in(rounds_path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + rounds_path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      const std::string round = line.substr(0, c1);
      const std::string accuracy = line.substr(c1 + 1, c2 - c1 - 1);
      if (!accuracy.empty()) acc << r.dir << ',' << round << ',' << accuracy << '\n';
    }
  }
  acc.close();

  int copied = 0;
  for (const auto& r : runs) {
    const fs::path js = fs::path(r.dir) / "js_matrix.csv";
    if (!fs::exists(js)) continue;
    const std::string base = fs::path(r.dir).filename().string();
    fs::copy_file(js, fs::path(opt.out) / ("heterogeneity_" + base + ".csv"),
                  fs::copy_options::overwrite_existing);
    ++copied;
  }

  std::cout << "wrote " << cmp_path << " (" << runs.size() << " runs, "
            << copied << " heterogeneity matrices)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"Desk-scale federated fine-tuning laboratory"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file; flags override its keys");
  app.allow_config_extras(false);
  app.fallthrough();

  app.add_option("--seed", opt.seed, "Base seed for every derived stream")
      ->capture_default_str();
  app.add_option("--out", opt.out, "Output directory")->capture_default_str();
  app.add_option("--threads", opt.threads, "Worker threads for local training")
      ->capture_default_str();

  auto* gen = app.add_subcommand("generate", "Produce a dataset file");
  gen->add_option("--classes", opt.synth.num_classes)
      ->capture_default_str()
      ->each([&opt](const std::string&) { opt.classes_given = true; });
  gen->add_option("--samples-per-class", opt.synth.samples_per_class)
      ->capture_default_str();
  gen->add_option("--vocab-size", opt.synth.vocab_size)->capture_default_str();
  gen->add_option("--seq-len", opt.synth.seq_len)->capture_default_str();
  gen->add_option("--signal-tokens", opt.synth.signal_tokens_per_class)
      ->capture_default_str();
  gen->add_option("--signal-rate", opt.synth.signal_rate)->capture_default_str();
  gen->add_option("--from-jsonl", opt.from_jsonl,
                  "Ingest JSONL ({\"text\",\"label\"}) instead of synthesizing");
  gen->add_option("--from-csv", opt.from_csv,
                  "Ingest CSV (text,label header) instead of synthesizing");

  auto* pre = app.add_subcommand("pretrain", "Centralized full fine-tuning");
  pre->add_option("--data", opt.data_path, "Dataset file")->required();
  pre->add_option("--embed-dim", opt.embed_dim)->capture_default_str();
  pre->add_option("--ffn-dim", opt.ffn_dim)->capture_default_str();
  pre->add_option("--blocks", opt.num_blocks)->capture_default_str();
  pre->add_option("--epochs", opt.pretrain_epochs)->capture_default_str();
  pre->add_option("--lr", opt.pretrain_lr)->capture_default_str();
  pre->add_option("--batch-size", opt.batch_size)->capture_default_str();
  pre->add_option("--optimizer", opt.optimizer, "sgd or adamw")
      ->capture_default_str();
  pre->add_option("--checkpoint", opt.checkpoint_path,
                  "Checkpoint path (default OUT/checkpoint.bin)");
  pre->add_flag("--skip", opt.pretrain_skip,
                "Write a random-init checkpoint without training");

  auto* part = app.add_subcommand("partition", "Dirichlet non-IID split");
  part->add_option("--data", opt.data_path, "Dataset file")->required();
  part->add_option("--clients", opt.clients)->capture_default_str();
  part->add_option("--alpha", opt.alpha)->capture_default_str();
  part->add_option("--test-fraction", opt.test_fraction)->capture_default_str();

  auto* runc = app.add_subcommand("run", "Federated fine-tuning run");
  runc->add_option("--data", opt.data_path,
                   "Dataset file (omit to synthesize from the seed)");
  runc->add_option("--checkpoint", opt.checkpoint_path, "Pretrained weights");
  runc->add_option("--shards", opt.shards_path,
                   "Shard file (omit to partition inline)");
  runc->add_option("--test-fraction", opt.test_fraction)->capture_default_str();
  runc->add_option("--classes", opt.synth.num_classes)->capture_default_str();
  runc->add_option("--samples-per-class", opt.synth.samples_per_class)
      ->capture_default_str();
  runc->add_option("--vocab-size", opt.synth.vocab_size)->capture_default_str();
  runc->add_option("--seq-len", opt.synth.seq_len)->capture_default_str();
  runc->add_option("--signal-tokens", opt.synth.signal_tokens_per_class)
      ->capture_default_str();
  runc->add_option("--signal-rate", opt.synth.signal_rate)
      ->capture_default_str();
  runc->add_option("--embed-dim", opt.embed_dim)->capture_default_str();
  runc->add_option("--ffn-dim", opt.ffn_dim)->capture_default_str();
  runc->add_option("--blocks", opt.num_blocks)->capture_default_str();
  runc->add_option("--clients", opt.clients)->capture_default_str();
  runc->add_option("--alpha", opt.alpha)->capture_default_str();
  runc->add_option("--mode", opt.mode, "fedft|fedbf|fedap|fedlr|federa")
      ->capture_default_str();
  runc->add_option("--rank", opt.rank, "0 caps at min(32, target dims)")
      ->capture_default_str();
  runc->add_option("--beta", opt.beta, "0 means equal to rank")
      ->capture_default_str();
  runc->add_option("--bneck-dim", opt.bottleneck_dim)->capture_default_str();
  runc->add_option("--targets", opt.targets,
                   "Adapter target tensors (default w_q,w_v of every block)")
      ->delimiter(',');
  runc->add_option("--rounds", opt.rounds)->capture_default_str();
  runc->add_option("--clients-per-round", opt.clients_per_round)
      ->capture_default_str();
  runc->add_option("--local-epochs", opt.local_epochs)->capture_default_str();
  runc->add_option("--batch-size", opt.batch_size)->capture_default_str();
  runc->add_option("--lr", opt.lr)->capture_default_str();
  runc->add_option("--optimizer", opt.optimizer, "sgd or adamw")
      ->capture_default_str();
  runc->add_option("--eval-every", opt.eval_every)->capture_default_str();
  runc->add_option("--snapshot-stride", opt.snapshot_stride)
      ->capture_default_str();
  runc->add_flag("--kahan", opt.kahan, "Compensated aggregation sums");

  auto* drift_cmd = app.add_subcommand("drift", "Snapshot drift series");
  drift_cmd->add_option("--run", opt.run_dir, "Run output directory")
      ->required();
  drift_cmd->add_option("--tensors", opt.drift_tensors,
                        "Tensor names (default: every .lora_a/.lora_b)")
      ->delimiter(',');

  auto* rep = app.add_subcommand("report", "Merge run outputs");
  rep->add_option("dirs", opt.report_dirs, "Run directories")->required();

  try {
    app.parse(argc, argv);
    if (gen->parsed()) return cmd_generate(opt);
    if (pre->parsed()) return cmd_pretrain(opt);
    if (part->parsed()) return cmd_partition(opt);
    if (runc->parsed()) return cmd_run(opt);
    if (drift_cmd->parsed()) return cmd_drift(opt);
    if (rep->parsed()) return cmd_report(opt);
    return 2;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
