// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedlab/common.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fedlab {

// Fixed-length token-id samples with integer labels. Token id 0 is the pad
// id; real tokens live in [1, vocab_size).
struct Dataset {
  IntMatrix tokens;         // N x seq_len
  std::vector<int> labels;  // length N
  int num_classes = 0;
  int vocab_size = 0;

  Index size() const { return tokens.rows(); }
  Index seq_len() const { return tokens.cols(); }
  void validate() const;  // throws DataError when invariants are broken
};

struct SynthConfig {
  int num_classes = 20;
  int samples_per_class = 250;
  int vocab_size = 1024;
  int seq_len = 16;
  int signal_tokens_per_class = 8;
  double signal_rate = 0.5;
  std::uint64_t seed = 1;
  void validate() const;  // throws ConfigError
};

// Each class owns a disjoint set of signal tokens carved from a seeded
// permutation of the vocabulary; every position is a class signal token
// with probability signal_rate and a uniform background token otherwise.
// Samples are emitted class-major, samples_per_class per class.
Dataset synth_generate(const SynthConfig& config);

// 64-bit FNV-1a of the token text; loaders map it to [1, vocab_size).
std::uint64_t hash_token(std::string_view token);

// Lines of {"text": ..., "label": ...}. Whitespace tokenization, hashed
// ids, truncate/pad to seq_len. num_classes 0 means infer as max label+1.
Dataset load_jsonl(const std::string& path, int vocab_size, int seq_len,
                   int num_classes = 0);

// CSV alternative with a required "text,label" header, UTF-8, quoted
// fields supported.
Dataset load_csv(const std::string& path, int vocab_size, int seq_len,
                 int num_classes = 0);

// Deterministic shuffled split; the test half receives
// round(test_fraction * N) samples.
std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset,
                                             double test_fraction,
                                             std::uint64_t seed);

Dataset subset(const Dataset& dataset, const std::vector<Index>& indices);

// JSON round trip used by the CLI; load(save(ds)) == ds exactly.
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

}  // namespace fedlab
