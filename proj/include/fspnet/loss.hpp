#pragma once

#include <array>

#include "fspnet/tensor.hpp"

namespace fspnet {

/// Four lateral probability maps at ground-truth resolution plus the binary
/// mask they are supervised against.
struct SupervisionBundle {
  std::array<Tensor, 4> predictions;
  Tensor ground_truth;  // strictly binary
};

/// Deep-supervision objective: sum_{i=0}^{2} 2^(i-4) * bce(P_i, G)
/// + bce(P_3, G). Weights evaluate to [1/16, 1/8, 1/4, 1].
Tensor total_loss(const SupervisionBundle& bundle);

/// The fixed per-layer weights, exposed for tests and reporting.
std::array<double, 4> supervision_weights();

}  // namespace fspnet
