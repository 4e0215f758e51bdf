#include "fspnet/loss.hpp"

#include <cmath>

#include "fspnet/nn.hpp"

namespace fspnet {

std::array<double, 4> supervision_weights() {
  return {std::exp2(-4.0), std::exp2(-3.0), std::exp2(-2.0), 1.0};
}

Tensor total_loss(const SupervisionBundle& bundle) {
  const Tensor& g = bundle.ground_truth;
  for (double v : g.values()) {
    if (v != 0.0 && v != 1.0) {
      throw ShapeError("total_loss: ground truth is not binary");
    }
  }
  for (const Tensor& p : bundle.predictions) {
    if (p.shape() != g.shape()) {
      throw ShapeError("total_loss: prediction " + shape_str(p.shape()) +
                       " does not match ground truth " + shape_str(g.shape()));
    }
  }
  const std::array<double, 4> w = supervision_weights();
  Tensor acc = scale(bce(bundle.predictions[0], g), w[0]);
  for (std::size_t i = 1; i < 4; ++i)
    acc = add(acc, scale(bce(bundle.predictions[i], g), w[i]));
  return acc;
}

}  // namespace fspnet
