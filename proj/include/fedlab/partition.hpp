// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/common.hpp"
#include "fedlab/data.hpp"
#include "fedlab/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace fedlab {

struct PartitionConfig {
  int num_clients = 20;
  double alpha = 1.0;
  std::uint64_t seed = 1;
  void validate() const;
};

struct ClientShard {
  int client_id = 0;
  std::vector<Index> sample_indices;
  Vector empirical_dist;  // class frequencies within the shard, sums to 1
};

// Class frequencies of the whole dataset.
Vector class_proportions(const Dataset& dataset);

// One draw from Dirichlet(concentration): independent Gamma(u_i, 1) draws
// normalized to the simplex. Every concentration entry must be positive.
Vector dirichlet_sample(const Vector& concentration, Rng& rng);

// Log density of the Dirichlet distribution at x. Boundary coordinates
// (x_i = 0) take the analytic limit: -inf when u_i > 1, +inf when
// u_i < 1; coordinates with u_i = 1 do not contribute either way.
double dirichlet_log_pdf(const Vector& x, const Vector& concentration);

// Class-conditional Dirichlet split: each client draws proportions from
// Dir(alpha * class_proportions), then every class's (shuffled) indices
// are divided by largest-remainder rounding of the clients' normalized
// weights. Redraws with a fresh stream, deterministically, until no shard
// is empty. The optional class_ids override replaces labels as the
// grouping key (entries in [0, max_id]).
std::vector<ClientShard> partition(const Dataset& dataset,
                                   const PartitionConfig& config);
std::vector<ClientShard> partition(const Dataset& dataset,
                                   const PartitionConfig& config,
                                   const std::vector<int>& class_ids);

// Jensen-Shannon divergence, base-2 logs, midpoint mixture; bounded [0, 1].
double js_divergence(const Vector& p, const Vector& q);

// Pairwise JS matrix over shard distributions plus its mean over i < j.
std::pair<Matrix, double> heterogeneity_matrix(
    const std::vector<ClientShard>& shards);

// JSON round trip for shard assignments; empirical distributions are
// rebuilt from the dataset on load.
void save_shards(const std::string& path,
                 const std::vector<ClientShard>& shards);
std::vector<ClientShard> load_shards(const std::string& path,
                                     const Dataset& dataset);

// N x N matrix as CSV with full-precision floats.
void save_js_matrix_csv(const std::string& path, const Matrix& m);

}  // namespace fedlab
