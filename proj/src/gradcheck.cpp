#include "fspnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fspnet {

double check_gradient(const std::function<Tensor(const Tensor&)>& f,
                      const Tensor& x, double step) {
  Tensor leaf = Tensor::from_data(x.shape(), x.values(), true);
  Tensor y = f(leaf);
  if (y.size() != 1) {
    throw ShapeError("check_gradient: f returned shape " +
                     shape_str(y.shape()) + ", expected a scalar");
  }
  y.backward();
  const std::vector<double> analytic = leaf.grad();

  std::vector<double> probe = x.values();
  double max_rel = 0.0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(Tensor::from_data(x.shape(), probe)).item();
    probe[i] = orig - step;
    const double fm = f(Tensor::from_data(x.shape(), probe)).item();
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, std::fabs(analytic[i] - numeric) / denom);
  }
  return max_rel;
}

}  // namespace fspnet
