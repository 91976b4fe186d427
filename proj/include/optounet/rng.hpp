#pragma once

#include <array>
#include <cstdint>
#include <optional>

namespace optounet {

/// xoshiro256** generator seeded through splitmix64. The sequence depends only
/// on the seed, so phantoms and initial weights reproduce everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  /// Standard normal via Box-Muller; the second deviate of each pair is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Exponential with mean 1 by inversion.
  double exponential();

 private:
  std::array<std::uint64_t, 4> s_{};
  std::optional<double> cached_normal_;
};

std::uint64_t splitmix64(std::uint64_t& state);

}  // namespace optounet
