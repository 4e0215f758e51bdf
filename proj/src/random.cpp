#include "fspnet/random.hpp"

#include <cmath>

namespace fspnet {

double Rng::next_normal() {
  // u1 nudged away from 0 so log is finite.
  const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  const double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

double Rng::next_trunc_normal(double stddev) {
  for (;;) {
    const double z = next_normal();
    if (z >= -2.0 && z <= 2.0) return z * stddev;
  }
}

}  // namespace fspnet
