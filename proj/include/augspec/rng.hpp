#pragma once

#include "augspec/linalg.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace augspec {

/// Deterministic random source. All transforms (uniform, normal, shuffle)
/// are spelled out explicitly instead of going through std:: distributions,
/// whose output is implementation-defined; mt19937_64 itself is fully
/// specified, so identical seeds give identical streams everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; caches the paired draw.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  std::uint64_t integer(std::uint64_t n);

  /// Fisher-Yates shuffle (std::shuffle is implementation-defined).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[integer(i)]);
    }
  }

  Matrix gaussian_matrix(Index rows, Index cols);
  Vector gaussian_vector(Index n);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// splitmix64 step; used to derive independent child seeds from a master
/// seed and a stream label.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace augspec
