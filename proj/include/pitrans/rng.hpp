#pragma once

#include <cstdint>
#include <string_view>

namespace pitrans {

/// Counter-based PRNG.
///
/// A stream is keyed by (seed, label): key = splitmix64(seed) ^ fnv1a64(label).
/// The i-th 64-bit output (i = 0, 1, ...) is splitmix64(key + (i + 1) * 0x9E3779B97F4A7C15),
/// so the whole state is the pair (key, counter) and any position can be restored.
/// Only integer arithmetic is used for raw draws; normals use Box-Muller in double.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view label);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);
  /// One normal draw (consumes two raw outputs).
  double normal(double mean, double stddev);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  static Rng from_state(std::uint64_t key, std::uint64_t counter);

 private:
  Rng() = default;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace pitrans
