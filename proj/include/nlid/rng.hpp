#pragma once

#include <cstdint>

namespace nlid {

/// Counter-based generator: draw i of stream `seed` is splitmix64(seed + (i+1)·φ64).
///
/// Every draw is a pure function of (seed, counter), so sequences are
/// reproducible across platforms and standard-library implementations.
/// Uniform doubles take the top 53 bits; normals use Box-Muller on two
/// consecutive uniforms.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace nlid
