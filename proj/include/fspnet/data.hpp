#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fspnet/metrics.hpp"
#include "fspnet/tensor.hpp"

namespace fspnet {

/// Camouflage-by-construction sample: the foreground blob carries the same
/// texture family as the background, mean-shifted by a small contrast.
struct SyntheticSample {
  Tensor image;  // 3 x h x w, values in [0,1]
  BinaryMask mask;
};

/// Deterministic in (count, h, w, seed); sample i draws from an independent
/// child stream so generation parallelizes without reordering effects.
/// Foreground covers 2%..60% of the pixels; the per-channel foreground /
/// background mean difference equals the drawn contrast in [0.02, 0.08].
std::vector<SyntheticSample> gen_synthetic(std::size_t count, std::size_t h,
                                           std::size_t w, std::uint64_t seed);

struct DatasetPair {
  std::string name;
  Tensor image;
  BinaryMask mask;
};

/// image_NNNN.png / mask_NNNN.png pairs.
void save_dataset(const std::string& dir,
                  const std::vector<SyntheticSample>& samples);
std::vector<DatasetPair> load_dataset(const std::string& dir);

}  // namespace fspnet
