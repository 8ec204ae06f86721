#pragma once

#include <cstdint>
#include <vector>

#include "rvsa/tensor.hpp"

namespace rvsa {

/// Deterministic, platform-independent RNG (splitmix64 core). Used instead
/// of std distributions so reports and training runs are byte-reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no cached spare, keeps state simple).
  double normal();

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  Tensor normal_tensor(Shape shape, double stddev = 1.0);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

  /// First k of a Fisher-Yates shuffled 0..n-1.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::uint64_t state_;
};

}  // namespace rvsa
