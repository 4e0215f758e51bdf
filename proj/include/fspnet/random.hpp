#pragma once

#include <cstdint>

namespace fspnet {

/// Deterministic 64-bit-state generator (splitmix64, Steele et al.).
/// Every stochastic element of the project draws from this type so runs
/// are bit-reproducible given a seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  /// Standard normal via Box-Muller, cosine branch. No caching, so the
  /// 64-bit state alone captures the generator exactly.
  double next_normal();

  /// Normal(0, std) resampled until within [-2 std, 2 std].
  double next_trunc_normal(double stddev);

  /// Integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  /// Independent child stream k; deterministic in (state, k).
  Rng fork(std::uint64_t k) const {
    Rng child(state_ ^ (0xD1B54A32D192ED03ull * (k + 1)));
    child.next_u64();
    return child;
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

}  // namespace fspnet
