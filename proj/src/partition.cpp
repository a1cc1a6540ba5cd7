// SPDX-License-Identifier: Apache-2.0
#include "fedlab/partition.hpp"

#include "fedlab/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace fedlab {

using nlohmann::json;

void PartitionConfig::validate() const {
  if (num_clients < 1) throw ConfigError("partition: num_clients must be >= 1");
  if (!(alpha > 0.0)) throw ConfigError("partition: alpha must be positive");
}

Vector class_proportions(const Dataset& dataset) {
  if (dataset.size() == 0) throw DataError("class_proportions: empty dataset");
  Vector counts = Vector::Zero(dataset.num_classes);
  for (const int label : dataset.labels) counts[label] += 1.0;
  return counts / static_cast<double>(dataset.size());
}

Vector dirichlet_sample(const Vector& concentration, Rng& rng) {
  if (concentration.size() < 1)
    throw ConfigError("dirichlet_sample: empty concentration");
  for (Index i = 0; i < concentration.size(); ++i)
    if (!(concentration[i] > 0.0))
      throw ConfigError("dirichlet_sample: concentrations must be positive");
  Vector g(concentration.size());
  for (;;) {
    for (Index i = 0; i < concentration.size(); ++i)
      g[i] = rng.next_gamma(concentration[i]);
    const double total = g.sum();
    // Tiny shapes can underflow every component to zero; redraw.
    if (total > 0.0) return g / total;
  }
}

double dirichlet_log_pdf(const Vector& x, const Vector& concentration) {
  if (x.size() != concentration.size())
    throw ConfigError("dirichlet_log_pdf: length mismatch");
  if (x.size() < 1) throw ConfigError("dirichlet_log_pdf: empty input");
  double sum_u = 0.0;
  double log_beta = 0.0;
  for (Index i = 0; i < concentration.size(); ++i) {
    if (!(concentration[i] > 0.0))
      throw ConfigError("dirichlet_log_pdf: concentrations must be positive");
    sum_u += concentration[i];
    log_beta += std::lgamma(concentration[i]);
  }
  log_beta -= std::lgamma(sum_u);
  double lp = -log_beta;
  for (Index i = 0; i < x.size(); ++i) {
    const double ui = concentration[i];
    if (x[i] > 0.0) {
      lp += (ui - 1.0) * std::log(x[i]);
    } else if (ui > 1.0) {
      return -std::numeric_limits<double>::infinity();
    } else if (ui < 1.0) {
      return std::numeric_limits<double>::infinity();
    }
    // ui == 1: the coordinate drops out of the product
  }
  return lp;
}

namespace {

std::vector<ClientShard> try_partition(const Dataset& dataset,
                                       const PartitionConfig& config,
                                       const std::vector<int>& class_ids,
                                       int num_classes,
                                       std::uint64_t attempt) {
  const int n_clients = config.num_clients;

  std::vector<std::vector<Index>> by_class(
      static_cast<std::size_t>(num_classes));
  for (Index i = 0; i < dataset.size(); ++i)
    by_class[static_cast<std::size_t>(class_ids[static_cast<std::size_t>(i)])]
        .push_back(i);

  // Per-client class proportions X_i ~ Dir(alpha * m).
  Vector m = Vector::Zero(num_classes);
  for (int c = 0; c < num_classes; ++c)
    m[c] = static_cast<double>(by_class[static_cast<std::size_t>(c)].size()) /
           static_cast<double>(dataset.size());
  Rng draw_rng = Rng::derive(config.seed, "partition-draw", attempt);
  Matrix x(n_clients, num_classes);
  for (int i = 0; i < n_clients; ++i) {
    x.row(i).setZero();
    // Restrict the draw to classes that actually occur.
    std::vector<Index> active;
    for (int c = 0; c < num_classes; ++c)
      if (m[c] > 0.0) active.push_back(c);
    Vector u(static_cast<Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k)
      u[static_cast<Index>(k)] = config.alpha * m[active[k]];
    const Vector draw = dirichlet_sample(u, draw_rng);
    for (std::size_t k = 0; k < active.size(); ++k)
      x(i, active[k]) = draw[static_cast<Index>(k)];
  }

  std::vector<ClientShard> shards(static_cast<std::size_t>(n_clients));
  for (int i = 0; i < n_clients; ++i) shards[static_cast<std::size_t>(i)].client_id = i;

  // Distribute each class by largest-remainder rounding of the clients'
  // normalized weights; ties go to the lower client id.
  for (int c = 0; c < num_classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    if (idx.empty()) continue;
    Rng shuffle_rng = Rng::derive(config.seed, "partition-assign", attempt,
                                  static_cast<std::uint64_t>(c));
    shuffle_rng.shuffle(idx.begin(), idx.end());
    double col_total = 0.0;
    for (int i = 0; i < n_clients; ++i) col_total += x(i, c);
    if (col_total <= 0.0) return {};  // degenerate draw, caller retries

    const auto n_c = static_cast<long long>(idx.size());
    std::vector<long long> take(static_cast<std::size_t>(n_clients));
    std::vector<std::pair<double, int>> rema;
    long long assigned = 0;
    for (int i = 0; i < n_clients; ++i) {
      const double quota = static_cast<double>(n_c) * x(i, c) / col_total;
      take[static_cast<std::size_t>(i)] =
          static_cast<long long>(std::floor(quota));
      assigned += take[static_cast<std::size_t>(i)];
      rema.emplace_back(quota - std::floor(quota), i);
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (long long l = 0; l < n_c - assigned; ++l)
      ++take[static_cast<std::size_t>(rema[static_cast<std::size_t>(l)].second)];

    std::size_t cursor = 0;
    for (int i = 0; i < n_clients; ++i) {
      auto& shard = shards[static_cast<std::size_t>(i)];
      for (long long t = 0; t < take[static_cast<std::size_t>(i)]; ++t)
        shard.sample_indices.push_back(idx[cursor++]);
    }
  }

  for (auto& shard : shards) {
    if (shard.sample_indices.empty()) return {};  // caller retries
    std::sort(shard.sample_indices.begin(), shard.sample_indices.end());
    Vector counts = Vector::Zero(num_classes);
    for (const Index s : shard.sample_indices)
      counts[class_ids[static_cast<std::size_t>(s)]] += 1.0;
    shard.empirical_dist =
        counts / static_cast<double>(shard.sample_indices.size());
  }
  return shards;
}

}  // namespace

std::vector<ClientShard> partition(const Dataset& dataset,
                                   const PartitionConfig& config) {
  return partition(dataset, config, dataset.labels);
}

std::vector<ClientShard> partition(const Dataset& dataset,
                                   const PartitionConfig& config,
                                   const std::vector<int>& class_ids) {
  config.validate();
  if (dataset.size() == 0) throw DataError("partition: empty dataset");
  if (static_cast<Index>(class_ids.size()) != dataset.size())
    throw ConfigError("partition: class id list length mismatch");
  if (config.num_clients > dataset.size())
    throw ConfigError("partition: more clients than samples");
  int num_classes = dataset.num_classes;
  for (const int c : class_ids) {
    if (c < 0) throw ConfigError("partition: negative class id");
    num_classes = std::max(num_classes, c + 1);
  }

  constexpr std::uint64_t kMaxAttempts = 100;
  for (std::uint64_t attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto shards = try_partition(dataset, config, class_ids, num_classes,
                                attempt);
    if (!shards.empty()) return shards;
  }
  throw DataError("partition: could not produce non-empty shards after 100 draws");
}

double js_divergence(const Vector& p, const Vector& q) {
  if (p.size() != q.size()) throw ConfigError("js_divergence: length mismatch");
  double js = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    const double mid = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log2(p[i] / mid);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log2(q[i] / mid);
  }
  return std::clamp(js, 0.0, 1.0);
}

std::pair<Matrix, double> heterogeneity_matrix(
    const std::vector<ClientShard>& shards) {
  const auto n = static_cast<Index>(shards.size());
  if (n < 2) throw ConfigError("heterogeneity_matrix: need at least 2 shards");
  Matrix js = Matrix::Zero(n, n);
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double d = js_divergence(shards[static_cast<std::size_t>(i)].empirical_dist,
                                     shards[static_cast<std::size_t>(j)].empirical_dist);
      js(i, j) = d;
      js(j, i) = d;
      total += d;
    }
  }
  return {js, total / (0.5 * static_cast<double>(n) * static_cast<double>(n - 1))};
}

void save_shards(const std::string& path,
                 const std::vector<ClientShard>& shards) {
  json doc;
  doc["format"] = "fedlab-shards";
  doc["version"] = 1;
  json clients = json::array();
  for (const auto& s : shards) {
    json c;
    c["client_id"] = s.client_id;
    c["indices"] = s.sample_indices;
    clients.push_back(std::move(c));
  }
  doc["clients"] = std::move(clients);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << doc.dump() << '\n';
  if (!out) throw DataError("write failed: " + path);
}

std::vector<ClientShard> load_shards(const std::string& path,
                                     const Dataset& dataset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  if (doc.value("format", "") != "fedlab-shards" || doc.value("version", 0) != 1)
    throw DataError(path + ": not a shard file");
  std::vector<ClientShard> shards;
  for (const auto& c : doc.at("clients")) {
    ClientShard s;
    s.client_id = c.at("client_id").get<int>();
    s.sample_indices = c.at("indices").get<std::vector<Index>>();
    if (s.sample_indices.empty())
      throw DataError(path + ": empty shard for client " +
                      std::to_string(s.client_id));
    Vector counts = Vector::Zero(dataset.num_classes);
    for (const Index i : s.sample_indices) {
      if (i < 0 || i >= dataset.size())
        throw DataError(path + ": sample index out of range");
      counts[dataset.labels[static_cast<std::size_t>(i)]] += 1.0;
    }
    s.empirical_dist =
        counts / static_cast<double>(s.sample_indices.size());
    shards.push_back(std::move(s));
  }
  return shards;
}

void save_js_matrix_csv(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_g17(m(i, j));
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace fedlab
