// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iterator>
#include <string_view>

namespace fedlab {

// Splittable deterministic generator built on the SplitMix64 walk.
//
// Every consumer derives its own stream from (base seed, purpose label,
// round, client), so the draw order of one component can never disturb
// another and replays are byte-identical across platforms and thread
// counts.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Hashes the identifiers into a starting state. Distinct labels give
  // streams that are independent for all practical purposes.
  static Rng derive(std::uint64_t base_seed, std::string_view purpose,
                    std::uint64_t round = 0, std::uint64_t client = 0);

  std::uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double next_double();
  // Uniform on (0, 1]; safe to feed into log().
  double next_double_pos();
  // Unbiased uniform integer on [0, n), n >= 1.
  std::uint64_t next_below(std::uint64_t n);

  // Standard normal via Box-Muller (no cached spare, to keep the stream
  // position a pure function of the number of draws).
  double next_gaussian();

  // Gamma(shape, 1) via Marsaglia-Tsang squeeze; shapes below one are
  // boosted and rescaled. shape must be positive.
  double next_gamma(double shape);

  // Fisher-Yates, identical order on every platform.
  template <typename RandomIt>
  void shuffle(RandomIt first, RandomIt last) {
    const auto n = static_cast<std::uint64_t>(std::distance(first, last));
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = next_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace fedlab
