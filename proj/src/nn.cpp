#include "fspnet/nn.hpp"

#include <algorithm>
#include <cmath>

namespace fspnet {

namespace {

void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw ShapeError(std::string(op) + ": " + msg);
}

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

}  // namespace

Parameter make_param_trunc_normal(const std::string& name, Shape shape,
                                  double stddev, Rng& rng) {
  std::vector<double> d(numel(shape));
  for (double& v : d) v = rng.next_trunc_normal(stddev);
  return Parameter(name, Tensor::from_data(std::move(shape), std::move(d), true),
                   "trunc_normal(std=" + std::to_string(stddev) + ")");
}

Parameter make_param_kaiming(const std::string& name, Shape shape,
                             std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<double> d(numel(shape));
  for (double& v : d) v = rng.next_normal() * stddev;
  return Parameter(name, Tensor::from_data(std::move(shape), std::move(d), true),
                   "kaiming(fan_in=" + std::to_string(fan_in) + ")");
}

Parameter make_param_const(const std::string& name, Shape shape, double v) {
  return Parameter(name, Tensor::full(std::move(shape), v, true),
                   v == 0.0 ? "zeros" : (v == 1.0 ? "ones" : "const(" + std::to_string(v) + ")"));
}

// ---------------------------------------------------------------------------
// layer norm
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require(x.rank() == 2, "layer_norm",
          "expects a 2-d input, got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  require(gamma.rank() == 1 && gamma.dim(0) == cols, "layer_norm",
          "scale length " + shape_str(gamma.shape()) +
              " does not match feature axis of " + shape_str(x.shape()));
  require(beta.rank() == 1 && beta.dim(0) == cols, "layer_norm",
          "shift length " + shape_str(beta.shape()) +
              " does not match feature axis of " + shape_str(x.shape()));

  std::vector<double> out(rows * cols);
  std::vector<double> mu(rows), inv_std(rows), xhat(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xr = x.values().data() + i * cols;
    double m = 0.0;
    for (std::size_t j = 0; j < cols; ++j) m += xr[j];
    m /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = xr[j] - m;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    mu[i] = m;
    inv_std[i] = is;
    for (std::size_t j = 0; j < cols; ++j) {
      const double h = (xr[j] - m) * is;
      xhat[i * cols + j] = h;
      out[i * cols + j] = h * gamma.values()[j] + beta.values()[j];
    }
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return make_op_result(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [xn, gn, bn, rows, cols, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](detail::Node& self) {
        const double* g = self.grad.data();
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              gn->grad[j] += g[i * cols + j] * xhat[i * cols + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              bn->grad[j] += g[i * cols + j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const double inv_n = 1.0 / static_cast<double>(cols);
          for (std::size_t i = 0; i < rows; ++i) {
            // dL/dxhat = g * gamma; standard layer-norm input gradient.
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
              const double dh = g[i * cols + j] * gn->value[j];
              sum_dh += dh;
              sum_dh_h += dh * xhat[i * cols + j];
            }
            for (std::size_t j = 0; j < cols; ++j) {
              const double dh = g[i * cols + j] * gn->value[j];
              const double h = xhat[i * cols + j];
              xn->grad[i * cols + j] +=
                  inv_std[i] * (dh - inv_n * sum_dh - inv_n * h * sum_dh_h);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// batch norm
// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(const std::string& name_, std::size_t channels)
    : name(name_),
      gamma(make_param_const(name_ + ".gamma", {channels}, 1.0)),
      beta(make_param_const(name_ + ".beta", {channels}, 0.0)),
      running_mean(channels, 0.0),
      running_var(channels, 1.0) {}

void BatchNorm2d::collect_buffers(
    std::vector<std::pair<std::string, std::vector<double>*>>& out) {
  out.emplace_back(name + ".running_mean", &running_mean);
  out.emplace_back(name + ".running_var", &running_var);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  require(x.rank() == 3, "batch_norm_2d",
          "expects C x H x W, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(c == channels(), "batch_norm_2d",
          "input " + shape_str(x.shape()) + " does not match parameter length " +
              std::to_string(channels()));
  const std::size_t hw = h * w;

  std::vector<double> mean_c(c), inv_std_c(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.values().data() + ch * hw;
      double m = 0.0;
      for (std::size_t i = 0; i < hw; ++i) m += p[i];
      m /= static_cast<double>(hw);
      double var = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = p[i] - m;
        var += d * d;
      }
      var /= static_cast<double>(hw);
      mean_c[ch] = m;
      inv_std_c[ch] = 1.0 / std::sqrt(var + eps);
      // Running update uses the unbiased variance, as is conventional.
      const double unbiased =
          hw > 1 ? var * static_cast<double>(hw) / static_cast<double>(hw - 1)
                 : var;
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * m;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean_c[ch] = running_mean[ch];
      inv_std_c[ch] = 1.0 / std::sqrt(running_var[ch] + eps);
    }
  }

  std::vector<double> out(c * hw), xhat(c * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = x.values().data() + ch * hw;
    const double g = gamma.tensor.values()[ch];
    const double b = beta.tensor.values()[ch];
    for (std::size_t i = 0; i < hw; ++i) {
      const double hv = (p[i] - mean_c[ch]) * inv_std_c[ch];
      xhat[ch * hw + i] = hv;
      out[ch * hw + i] = hv * g + b;
    }
  }

  auto xn = x.node();
  auto gn = gamma.tensor.node();
  auto bn = beta.tensor.node();
  return make_op_result(
      "batch_norm_2d", x.shape(), std::move(out),
      {x, gamma.tensor, beta.tensor},
      [xn, gn, bn, c, hw, training, inv_std_c = std::move(inv_std_c),
       xhat = std::move(xhat)](detail::Node& self) {
        const double* g = self.grad.data();
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i)
              acc += g[ch * hw + i] * xhat[ch * hw + i];
            gn->grad[ch] += acc;
          }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (std::size_t i = 0; i < hw; ++i) acc += g[ch * hw + i];
            bn->grad[ch] += acc;
          }
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const double inv_n = 1.0 / static_cast<double>(hw);
          for (std::size_t ch = 0; ch < c; ++ch) {
            const double gam = gn->value[ch];
            if (training) {
              double sum_dh = 0.0, sum_dh_h = 0.0;
              for (std::size_t i = 0; i < hw; ++i) {
                const double dh = g[ch * hw + i] * gam;
                sum_dh += dh;
                sum_dh_h += dh * xhat[ch * hw + i];
              }
              for (std::size_t i = 0; i < hw; ++i) {
                const double dh = g[ch * hw + i] * gam;
                xn->grad[ch * hw + i] +=
                    inv_std_c[ch] * (dh - inv_n * sum_dh -
                                     inv_n * xhat[ch * hw + i] * sum_dh_h);
              }
            } else {
              // Eval mode normalizes by constants.
              for (std::size_t i = 0; i < hw; ++i)
                xn->grad[ch * hw + i] += g[ch * hw + i] * gam * inv_std_c[ch];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 3, "conv2d",
          "input must be C x H x W, got " + shape_str(x.shape()));
  require(w.rank() == 4, "conv2d",
          "kernel must be Cout x Cin x K x K, got " + shape_str(w.shape()));
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  require(w.dim(1) == cin, "conv2d",
          "kernel input channels " + shape_str(w.shape()) +
              " do not match input " + shape_str(x.shape()));
  require(w.dim(2) == w.dim(3) && (k % 2) == 1, "conv2d",
          "kernel must be square with odd size, got " + shape_str(w.shape()));
  require(b.rank() == 1 && b.dim(0) == cout, "conv2d",
          "bias " + shape_str(b.shape()) + " does not match kernel " +
              shape_str(w.shape()));
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(h);
  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(wd);

  std::vector<double> out(cout * h * wd);
  for (std::size_t co = 0; co < cout; ++co) {
    double* oc = out.data() + co * h * wd;
    const double bias = b.values()[co];
    for (std::size_t i = 0; i < h * wd; ++i) oc[i] = bias;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xc = x.values().data() + ci * h * wd;
      const double* wc = w.values().data() + (co * cin + ci) * k * k;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const double wv = wc[ky * k + kx];
          if (wv == 0.0) continue;
          const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
          const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(ih, ih - dy);
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(iw, iw - dx);
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            const double* src = xc + (y + dy) * iw + dx;
            double* dst = oc + y * iw;
            for (std::ptrdiff_t xp = x0; xp < x1; ++xp)
              dst[xp] += wv * src[xp];
          }
        }
      }
    }
  }

  auto xn = x.node();
  auto wn = w.node();
  auto bn = b.node();
  return make_op_result(
      "conv2d", {cout, h, wd}, std::move(out), {x, w, b},
      [xn, wn, bn, cin, cout, h, wd, k, pad, ih, iw](detail::Node& self) {
        const double* g = self.grad.data();
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t co = 0; co < cout; ++co) {
            double acc = 0.0;
            const double* gc = g + co * h * wd;
            for (std::size_t i = 0; i < h * wd; ++i) acc += gc[i];
            bn->grad[co] += acc;
          }
        }
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gc = g + co * h * wd;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* xc = xn->value.data() + ci * h * wd;
            const double* wc = wn->value.data() + (co * cin + ci) * k * k;
            double* gxc =
                xn->requires_grad
                    ? (xn->ensure_grad(), xn->grad.data() + ci * h * wd)
                    : nullptr;
            double* gwc =
                wn->requires_grad
                    ? (wn->ensure_grad(),
                       wn->grad.data() + (co * cin + ci) * k * k)
                    : nullptr;
            if (!gxc && !gwc) continue;
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t dx =
                    static_cast<std::ptrdiff_t>(kx) - pad;
                const double wv = wc[ky * k + kx];
                double wacc = 0.0;
                const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
                const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(ih, ih - dy);
                const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(iw, iw - dx);
                for (std::ptrdiff_t y = y0; y < y1; ++y) {
                  const double* grow = gc + y * iw;
                  const double* xrow = xc + (y + dy) * iw + dx;
                  double* gxrow = gxc ? gxc + (y + dy) * iw + dx : nullptr;
                  for (std::ptrdiff_t xp = x0; xp < x1; ++xp) {
                    const double gv = grow[xp];
                    if (gwc) wacc += gv * xrow[xp];
                    if (gxrow) gxrow[xp] += gv * wv;
                  }
                }
                if (gwc) gwc[ky * k + kx] += wacc;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// bilinear interpolation (half-pixel centers, constant-preserving)
// ---------------------------------------------------------------------------

namespace {

struct LerpAxis {
  std::vector<std::size_t> lo, hi;
  std::vector<double> w_hi;  // weight of hi sample; lo gets 1 - w_hi
};

LerpAxis make_lerp(std::size_t in, std::size_t out) {
  LerpAxis ax;
  ax.lo.resize(out);
  ax.hi.resize(out);
  ax.w_hi.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    const double mx = static_cast<double>(in - 1);
    if (src > mx) src = mx;
    const std::size_t lo = static_cast<std::size_t>(src);
    ax.lo[o] = lo;
    ax.hi[o] = std::min(lo + 1, in - 1);
    ax.w_hi[o] = src - static_cast<double>(lo);
  }
  return ax;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require(x.rank() == 3, "bilinear_resize",
          "input must be C x H x W, got " + shape_str(x.shape()));
  require(out_h > 0 && out_w > 0, "bilinear_resize",
          "target size must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  LerpAxis ay = make_lerp(h, out_h);
  LerpAxis axx = make_lerp(w, out_w);
  std::vector<double> out(c * out_h * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.values().data() + ch * h * w;
    double* dst = out.data() + ch * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double wy = ay.w_hi[y];
      const double* r0 = src + ay.lo[y] * w;
      const double* r1 = src + ay.hi[y] * w;
      for (std::size_t xo = 0; xo < out_w; ++xo) {
        const double wx = axx.w_hi[xo];
        const double top =
            r0[axx.lo[xo]] * (1.0 - wx) + r0[axx.hi[xo]] * wx;
        const double bot =
            r1[axx.lo[xo]] * (1.0 - wx) + r1[axx.hi[xo]] * wx;
        dst[y * out_w + xo] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  auto xn = x.node();
  return make_op_result(
      "bilinear_resize", {c, out_h, out_w}, std::move(out), {x},
      [xn, c, h, w, out_h, out_w, ay = std::move(ay),
       axx = std::move(axx)](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double* gsrc = xn->grad.data() + ch * h * w;
          const double* gdst = self.grad.data() + ch * out_h * out_w;
          for (std::size_t y = 0; y < out_h; ++y) {
            const double wy = ay.w_hi[y];
            for (std::size_t xo = 0; xo < out_w; ++xo) {
              const double wx = axx.w_hi[xo];
              const double gv = gdst[y * out_w + xo];
              gsrc[ay.lo[y] * w + axx.lo[xo]] += gv * (1.0 - wy) * (1.0 - wx);
              gsrc[ay.lo[y] * w + axx.hi[xo]] += gv * (1.0 - wy) * wx;
              gsrc[ay.hi[y] * w + axx.lo[xo]] += gv * wy * (1.0 - wx);
              gsrc[ay.hi[y] * w + axx.hi[xo]] += gv * wy * wx;
            }
          }
        }
      });
}

Tensor bilinear_upsample_2x(const Tensor& x) {
  require(x.rank() == 3, "bilinear_upsample_2x",
          "input must be C x H x W, got " + shape_str(x.shape()));
  return bilinear_resize(x, x.dim(1) * 2, x.dim(2) * 2);
}

// ---------------------------------------------------------------------------
// adaptive average pooling over the token axis
// ---------------------------------------------------------------------------

Tensor adaptive_avg_pool_seq(const Tensor& x, std::size_t k) {
  require(x.rank() == 2, "adaptive_avg_pool_seq",
          "input must be l x d, got " + shape_str(x.shape()));
  const std::size_t l = x.dim(0), d = x.dim(1);
  require(k >= 1 && k <= l, "adaptive_avg_pool_seq",
          "anchors " + std::to_string(k) + " exceed rows of " +
              shape_str(x.shape()));
  std::vector<std::size_t> lo(k), hi(k);
  for (std::size_t n = 0; n < k; ++n) {
    lo[n] = n * l / k;
    hi[n] = (n + 1) * l / k;
  }
  std::vector<double> out(k * d, 0.0);
  for (std::size_t n = 0; n < k; ++n) {
    const double inv = 1.0 / static_cast<double>(hi[n] - lo[n]);
    for (std::size_t r = lo[n]; r < hi[n]; ++r)
      for (std::size_t j = 0; j < d; ++j)
        out[n * d + j] += x.values()[r * d + j] * inv;
  }
  auto xn = x.node();
  return make_op_result(
      "adaptive_avg_pool_seq", {k, d}, std::move(out), {x},
      [xn, d, lo = std::move(lo), hi = std::move(hi)](detail::Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t n = 0; n < lo.size(); ++n) {
          const double inv = 1.0 / static_cast<double>(hi[n] - lo[n]);
          for (std::size_t r = lo[n]; r < hi[n]; ++r)
            for (std::size_t j = 0; j < d; ++j)
              xn->grad[r * d + j] += self.grad[n * d + j] * inv;
        }
      });
}

// ---------------------------------------------------------------------------
// binary cross-entropy
// ---------------------------------------------------------------------------

Tensor bce(const Tensor& prediction, const Tensor& target) {
  require(prediction.shape() == target.shape(), "bce",
          "prediction " + shape_str(prediction.shape()) +
              " does not match target " + shape_str(target.shape()));
  constexpr double kEps = 1e-7;
  const std::size_t n = prediction.size();
  double acc = 0.0;
  std::vector<double> clamped(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(prediction.values()[i], kEps, 1.0 - kEps);
    clamped[i] = p;
    const double g = target.values()[i];
    acc -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
  }
  acc /= static_cast<double>(n);
  auto pn = prediction.node();
  auto tn = target.node();
  return make_op_result(
      "bce", {1}, {acc}, {prediction, target},
      [pn, tn, n, clamped = std::move(clamped)](detail::Node& self) {
        const double g0 = self.grad[0] / static_cast<double>(n);
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const double p = clamped[i];
            const double raw = pn->value[i];
            // Zero slope outside the clamp interval.
            if (raw != p) continue;
            const double g = tn->value[i];
            pn->grad[i] += g0 * (-g / p + (1.0 - g) / (1.0 - p));
          }
        }
        if (tn->requires_grad) {
          tn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            const double p = clamped[i];
            tn->grad[i] += g0 * (std::log(1.0 - p) - std::log(p));
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w) { return matmul(x, w); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

}  // namespace fspnet
