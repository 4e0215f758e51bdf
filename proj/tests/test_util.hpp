#pragma once

#include <cmath>
#include <vector>

#include "fspnet/metrics.hpp"
#include "fspnet/random.hpp"
#include "fspnet/tensor.hpp"

namespace testutil {

inline fspnet::Tensor rand_uniform(fspnet::Rng& rng, fspnet::Shape shape,
                                   double lo = -1.0, double hi = 1.0,
                                   bool requires_grad = false) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> data(n);
  for (double& v : data) v = rng.next_uniform(lo, hi);
  return fspnet::Tensor::from_data(std::move(shape), std::move(data),
                                   requires_grad);
}

inline fspnet::Tensor rand_normal(fspnet::Rng& rng, fspnet::Shape shape,
                                  double stddev = 1.0,
                                  bool requires_grad = false) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> data(n);
  for (double& v : data) v = rng.next_normal() * stddev;
  return fspnet::Tensor::from_data(std::move(shape), std::move(data),
                                   requires_grad);
}

// Uniform magnitudes bounded away from zero, for checks whose finite
// differences would straddle a relu kink otherwise.
inline fspnet::Tensor rand_kink_free(fspnet::Rng& rng, fspnet::Shape shape,
                                     double min_mag = 0.05,
                                     double max_mag = 1.0) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> data(n);
  for (double& v : data) {
    const double mag = rng.next_uniform(min_mag, max_mag);
    v = rng.next_uniform() < 0.5 ? -mag : mag;
  }
  return fspnet::Tensor::from_data(std::move(shape), std::move(data));
}

inline fspnet::ScoreMap rand_score_map(fspnet::Rng& rng, std::size_t h,
                                       std::size_t w) {
  fspnet::ScoreMap m{h, w, {}};
  m.v.resize(h * w);
  for (double& v : m.v) v = rng.next_uniform();
  return m;
}

// Random blob-ish mask with at least one foreground and one background
// pixel.
inline fspnet::BinaryMask rand_mask(fspnet::Rng& rng, std::size_t h,
                                    std::size_t w) {
  for (;;) {
    fspnet::BinaryMask m{h, w, {}};
    m.v.resize(h * w);
    const double cx = rng.next_uniform(0.2, 0.8) * static_cast<double>(w);
    const double cy = rng.next_uniform(0.2, 0.8) * static_cast<double>(h);
    const double rx = rng.next_uniform(0.15, 0.45) * static_cast<double>(w);
    const double ry = rng.next_uniform(0.15, 0.45) * static_cast<double>(h);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = (static_cast<double>(x) - cx) / rx;
        const double dy = (static_cast<double>(y) - cy) / ry;
        m.v[y * w + x] = dx * dx + dy * dy <= 1.0 ? 1 : 0;
      }
    std::size_t fg = 0;
    for (auto v : m.v) fg += v;
    if (fg > 0 && fg < h * w) return m;
  }
}

inline double max_abs_diff(const std::vector<double>& a,
                           const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
