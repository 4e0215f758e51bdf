#pragma once

#include <functional>

#include "fspnet/tensor.hpp"

namespace fspnet {

/// Compares the reverse-mode gradient of a scalar-valued function against
/// central finite differences (f(x+h) - f(x-h)) / 2h per coordinate and
/// returns the maximum relative error, with denominator
/// max(|analytic|, |numeric|, 1e-8). Throws ShapeError if f is not scalar.
double check_gradient(const std::function<Tensor(const Tensor&)>& f,
                      const Tensor& x, double step);

}  // namespace fspnet
