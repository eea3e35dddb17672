// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace urkle {

/// Caller-owned random stream. Independent streams are derived from a seed
/// plus a list of integer tags, so work split into batches stays
/// reproducible regardless of the order in which streams are consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  Rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) : engine_(mix(seed, tags)) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double uniform01() { return uniform(0.0, 1.0); }
  bool bernoulli(double p) { return uniform01() < p; }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }

  /// Child stream keyed by `tag`; does not advance this stream.
  Rng derive(std::uint64_t tag) const { return Rng(mix(seed_fingerprint(), {tag})); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_fingerprint() const {
    std::mt19937_64 copy = engine_;
    return copy();
  }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }
  static std::uint64_t mix(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = splitmix(seed);
    for (std::uint64_t t : tags) h = splitmix(h ^ splitmix(t + 0x632BE59BD9B4E019ull));
    return h;
  }

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace urkle
