// SPDX-License-Identifier: Apache-2.0
#include "fedlab/rng.hpp"

#include "fedlab/common.hpp"

#include <cmath>
#include <numbers>

namespace fedlab {

namespace {

// boost-style combine; the SplitMix64 output function finishes the mixing.
std::uint64_t combine(std::uint64_t h, std::uint64_t v) {
  return h ^ (v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
}

}  // namespace

Rng Rng::derive(std::uint64_t base_seed, std::string_view purpose,
                std::uint64_t round, std::uint64_t client) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label
  for (const char ch : purpose) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  h = combine(h, base_seed);
  h = combine(h, round);
  h = combine(h, client);
  return Rng(h);
}

std::uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::next_double_pos() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

std::uint64_t Rng::next_below(std::uint64_t n) {
  if (n == 0) throw ConfigError("next_below: n must be at least 1");
  const std::uint64_t rem = (0 - n) % n;  // 2^64 mod n
  std::uint64_t r = next_u64();
  if (rem != 0) {
    const std::uint64_t bound = 0 - rem;  // largest multiple of n
    while (r >= bound) r = next_u64();
  }
  return r % n;
}

double Rng::next_gaussian() {
  const double u1 = next_double_pos();
  const double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::next_gamma(double shape) {
  if (!(shape > 0.0)) throw ConfigError("gamma shape must be positive");
  if (shape < 1.0) {
    // Boost a sub-one shape and rescale by a uniform power.
    const double u = next_double_pos();
    const double g = next_gamma(shape + 1.0);
    return g * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = next_gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = next_double_pos();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace fedlab
