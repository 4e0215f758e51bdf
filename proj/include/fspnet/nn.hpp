#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fspnet/random.hpp"
#include "fspnet/tensor.hpp"

namespace fspnet {

/// Named trainable tensor plus the initialization rule that produced it.
struct Parameter {
  std::string name;
  Tensor tensor;
  std::string init_spec;

  Parameter() = default;
  Parameter(std::string n, Tensor t, std::string spec)
      : name(std::move(n)), tensor(std::move(t)), init_spec(std::move(spec)) {}
};

// Initializers. The init_spec strings they report make a parameter
// reproducible from a seed.
Parameter make_param_trunc_normal(const std::string& name, Shape shape,
                                  double stddev, Rng& rng);
Parameter make_param_kaiming(const std::string& name, Shape shape,
                             std::size_t fan_in, Rng& rng);
Parameter make_param_const(const std::string& name, Shape shape, double v);

/// Per-row normalization over the last axis of a 2-d tensor with learnable
/// scale and shift. epsilon stabilizes the zero-variance case.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

/// Per-channel batch normalization over the spatial extent of a C x H x W
/// feature map. Running statistics start at mean 0 / var 1 and are updated
/// in training mode only.
struct BatchNorm2d {
  std::string name;
  Parameter gamma, beta;
  std::vector<double> running_mean, running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, std::size_t channels);

  Tensor forward(const Tensor& x, bool training);
  std::size_t channels() const { return running_mean.size(); }
  void collect_buffers(
      std::vector<std::pair<std::string, std::vector<double>*>>& out);
};

/// conv2d with stride 1 and same padding; w is Cout x Cin x K x K with K
/// odd (1 or 3 here), b is Cout.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w);
Tensor bilinear_upsample_2x(const Tensor& x);

/// Pools an l x d token matrix to k x d by averaging k contiguous row bins;
/// bin n spans rows [floor(n*l/k), floor((n+1)*l/k)).
Tensor adaptive_avg_pool_seq(const Tensor& x, std::size_t k);

/// Mean binary cross-entropy; predictions are clamped to
/// [1e-7, 1 - 1e-7] before the logarithm.
Tensor bce(const Tensor& prediction, const Tensor& target);

/// x: m x in, w: in x out, optional bias: out.
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace fspnet
