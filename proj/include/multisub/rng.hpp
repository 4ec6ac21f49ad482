#pragma once

#include <cstdint>
#include <random>

namespace multisub {

// mt19937_64 is specified bit-exactly by the standard, the std
// distributions are not. These samplers keep seeded runs identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Box-Muller, one value per call).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, bound), bound > 0, rejection sampled.
  std::uint64_t below(std::uint64_t bound);
  /// Independent child seed; advances this generator.
  std::uint64_t split() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace multisub
