#include "fspnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace fspnet {

namespace {

thread_local bool g_grad_mode = true;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void require(bool cond, const char* op, const std::string& msg) {
  if (!cond) throw ShapeError(std::string(op) + ": " + msg);
}

// Splits a shape around `axis` into (outer, axis_len, inner) extents so the
// flat index is (o * axis_len + a) * inner + i.
struct AxisSplit {
  std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t k = 0; k < axis; ++k) out.outer *= s[k];
  out.axis = s[axis];
  for (std::size_t k = axis + 1; k < s.size(); ++k) out.inner *= s[k];
  return out;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  if (shape.empty()) return "scalar";
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  return os.str();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = prev_; }

bool grad_mode_enabled() { return g_grad_mode; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_numel(shape), 0.0),
                   requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  return from_data(shape, std::vector<double>(shape_numel(shape), v),
                   requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_data(Shape{1}, std::vector<double>{v}, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("from_data: " + std::to_string(data.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  node->is_leaf = true;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return from_data({n, n}, std::move(d));
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) +
                     " is not a scalar");
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const Shape& s = node_->shape;
  if (idx.size() != s.size()) {
    throw ShapeError("at: index rank mismatch for shape " + shape_str(s));
  }
  std::size_t flat = 0;
  std::size_t k = 0;
  for (std::size_t i : idx) {
    if (i >= s[k]) throw ShapeError("at: index out of range");
    flat = flat * s[k] + i;
    ++k;
  }
  return node_->value[flat];
}

void Tensor::set_requires_grad(bool enabled) {
  if (!node_->is_leaf) {
    throw std::logic_error("set_requires_grad: only valid on leaf tensors");
  }
  node_->requires_grad = enabled;
  if (enabled) node_->ensure_grad();
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->ensure_grad();
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  return Tensor::from_data(node_->shape, node_->value, false);
}

void Tensor::backward() {
  if (size() != 1) {
    throw ShapeError("backward: root of shape " + shape_str(shape()) +
                     " is not a scalar");
  }
  if (!node_->requires_grad) return;

  // Iterative post-order topological sort over the requires_grad subgraph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next].get();
      ++next;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (detail::Node* n : order) n->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward) {
  if (value.size() != shape_numel(shape)) {
    throw std::logic_error(std::string(op) + ": internal output-size bug");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
  bool needs = false;
  if (g_grad_mode) {
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  }
  node->requires_grad = needs;
  if (needs) {
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul",
          "expects 2-d operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  require(k == k2, "matmul",
          "inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    const double* arow = pa + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return make_op_result(
      "matmul", {m, n}, std::move(out), {a, b},
      [an, bn, m, k, n](detail::Node& self) {
        const double* g = self.grad.data();
        if (an->requires_grad) {
          an->ensure_grad();
          double* ga = an->grad.data();
          const double* pb = bn->value.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* grow = g + i * n;
              const double* brow = pb + kk * n;
              for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[i * k + kk] += acc;
            }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          double* gb = bn->grad.data();
          const double* pa = an->value.data();
          for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t i = 0; i < m; ++i) {
              const double av = pa[i * k + kk];
              if (av == 0.0) continue;
              const double* grow = g + i * n;
              double* brow = gb + kk * n;
              for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose",
          "expects a 2-d operand, got " + shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  auto an = a.node();
  return make_op_result("transpose", {n, m}, std::move(out), {a},
                        [an, m, n](detail::Node& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < n; ++j)
                              an->grad[i * n + j] += self.grad[j * m + i];
                        });
}

namespace {

Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b,
                          double (*fwd)(double, double), double da_coeff,
                          double db_coeff, bool grads_use_values) {
  require(a.shape() == b.shape(), op,
          "operand shapes differ: " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = fwd(a.values()[i], b.values()[i]);
  auto an = a.node();
  auto bn = b.node();
  return make_op_result(
      op, a.shape(), std::move(out), {a, b},
      [an, bn, da_coeff, db_coeff, grads_use_values](detail::Node& self) {
        const std::size_t n = self.size();
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            an->grad[i] += self.grad[i] *
                           (grads_use_values ? bn->value[i] : da_coeff);
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            bn->grad[i] += self.grad[i] *
                           (grads_use_values ? an->value[i] : db_coeff);
        }
      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, 1.0, 1.0, false);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, 1.0, -1.0, false);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, 0.0, 0.0, true);
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * s;
  auto an = a.node();
  return make_op_result("scale", a.shape(), std::move(out), {a},
                        [an, s](detail::Node& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < self.size(); ++i)
                            an->grad[i] += self.grad[i] * s;
                        });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + s;
  auto an = a.node();
  return make_op_result("add_scalar", a.shape(), std::move(out), {a},
                        [an](detail::Node& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < self.size(); ++i)
                            an->grad[i] += self.grad[i];
                        });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require(a.rank() == 2 && v.rank() == 1, "add_rowvec",
          "expects matrix and vector, got " + shape_str(a.shape()) + " and " +
              shape_str(v.shape()));
  require(a.dim(1) == v.dim(0), "add_rowvec",
          "row length differs: " + shape_str(a.shape()) + " vs " +
              shape_str(v.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = a.values()[i * n + j] + v.values()[j];
  auto an = a.node();
  auto vn = v.node();
  return make_op_result("add_rowvec", a.shape(), std::move(out), {a, v},
                        [an, vn, m, n](detail::Node& self) {
                          if (an->requires_grad) {
                            an->ensure_grad();
                            for (std::size_t i = 0; i < m * n; ++i)
                              an->grad[i] += self.grad[i];
                          }
                          if (vn->requires_grad) {
                            vn->ensure_grad();
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j)
                                vn->grad[j] += self.grad[i * n + j];
                          }
                        });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no operands");
  const Shape& s0 = parts[0].shape();
  require(axis < s0.size(), "concat",
          "axis " + std::to_string(axis) + " invalid for shape " +
              shape_str(s0));
  std::size_t total_axis = 0;
  for (const Tensor& p : parts) {
    require(p.rank() == s0.size(), "concat",
            "rank mismatch: " + shape_str(p.shape()) + " vs " + shape_str(s0));
    for (std::size_t k = 0; k < s0.size(); ++k) {
      if (k == axis) continue;
      require(p.dim(k) == s0[k], "concat",
              "non-concatenated axes differ: " + shape_str(p.shape()) +
                  " vs " + shape_str(s0));
    }
    total_axis += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[axis] = total_axis;
  AxisSplit sp = split_axis(out_shape, axis);
  std::vector<double> out(sp.outer * sp.axis * sp.inner);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t pa = p.dim(axis);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t a = 0; a < pa; ++a) {
        const double* srcp = p.values().data() + (o * pa + a) * sp.inner;
        double* dstp = out.data() + (o * sp.axis + offset + a) * sp.inner;
        std::copy(srcp, srcp + sp.inner, dstp);
      }
    offset += pa;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  std::vector<std::size_t> extents;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node());
    extents.push_back(p.dim(axis));
  }
  return make_op_result(
      "concat", out_shape, std::move(out), parts,
      [nodes, extents, sp](detail::Node& self) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
          auto& pn = nodes[pi];
          const std::size_t pa = extents[pi];
          if (pn->requires_grad) {
            pn->ensure_grad();
            for (std::size_t o = 0; o < sp.outer; ++o)
              for (std::size_t a = 0; a < pa; ++a) {
                const double* gp =
                    self.grad.data() + (o * sp.axis + offset + a) * sp.inner;
                double* dst = pn->grad.data() + (o * pa + a) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += gp[i];
              }
          }
          offset += pa;
        }
      });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.size(), "reshape",
          "cannot reshape " + shape_str(a.shape()) + " into " +
              shape_str(shape));
  auto an = a.node();
  return make_op_result("reshape", std::move(shape),
                        std::vector<double>(a.values()), {a},
                        [an](detail::Node& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < self.size(); ++i)
                            an->grad[i] += self.grad[i];
                        });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t len) {
  require(axis < a.rank(), "slice",
          "axis " + std::to_string(axis) + " invalid for shape " +
              shape_str(a.shape()));
  require(start + len <= a.dim(axis), "slice",
          "range [" + std::to_string(start) + ", " +
              std::to_string(start + len) + ") exceeds shape " +
              shape_str(a.shape()));
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  AxisSplit sp = split_axis(a.shape(), axis);
  std::vector<double> out(sp.outer * len * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < len; ++k) {
      const double* srcp =
          a.values().data() + (o * sp.axis + start + k) * sp.inner;
      std::copy(srcp, srcp + sp.inner, out.data() + (o * len + k) * sp.inner);
    }
  auto an = a.node();
  return make_op_result(
      "slice", std::move(out_shape), std::move(out), {a},
      [an, sp, start, len](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t k = 0; k < len; ++k) {
            const double* gp = self.grad.data() + (o * len + k) * sp.inner;
            double* dst =
                an->grad.data() + (o * sp.axis + start + k) * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += gp[i];
          }
      });
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  auto an = a.node();
  return make_op_result("relu", a.shape(), std::move(out), {a},
                        [an](detail::Node& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < self.size(); ++i)
                            if (an->value[i] > 0.0)
                              an->grad[i] += self.grad[i];
                        });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    // Split by sign so exp never overflows.
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  auto an = a.node();
  return make_op_result("sigmoid", a.shape(), std::move(out), {a},
                        [an](detail::Node& self) {
                          if (!an->requires_grad) return;
                          an->ensure_grad();
                          for (std::size_t i = 0; i < self.size(); ++i) {
                            const double y = self.value[i];
                            an->grad[i] += self.grad[i] * y * (1.0 - y);
                          }
                        });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.values()[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  auto an = a.node();
  return make_op_result(
      "gelu", a.shape(), std::move(out), {a}, [an](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        constexpr double c_inv_sqrt2 = 0.7071067811865475244;
        constexpr double c_inv_sqrt2pi = 0.3989422804014326779;
        for (std::size_t i = 0; i < self.size(); ++i) {
          const double x = an->value[i];
          const double cdf = 0.5 * (1.0 + std::erf(x * c_inv_sqrt2));
          const double pdf = c_inv_sqrt2pi * std::exp(-0.5 * x * x);
          an->grad[i] += self.grad[i] * (cdf + x * pdf);
        }
      });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  require(axis < a.rank(), "softmax",
          "axis " + std::to_string(axis) + " invalid for shape " +
              shape_str(a.shape()));
  AxisSplit sp = split_axis(a.shape(), axis);
  std::vector<double> out(a.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.axis; ++k)
        mx = std::max(mx, a.values()[(o * sp.axis + k) * sp.inner + i]);
      double denom = 0.0;
      for (std::size_t k = 0; k < sp.axis; ++k) {
        const std::size_t idx = (o * sp.axis + k) * sp.inner + i;
        out[idx] = std::exp(a.values()[idx] - mx);
        denom += out[idx];
      }
      for (std::size_t k = 0; k < sp.axis; ++k)
        out[(o * sp.axis + k) * sp.inner + i] /= denom;
    }
  auto an = a.node();
  return make_op_result(
      "softmax", a.shape(), std::move(out), {a}, [an, sp](detail::Node& self) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i) {
            double dot = 0.0;
            for (std::size_t k = 0; k < sp.axis; ++k) {
              const std::size_t idx = (o * sp.axis + k) * sp.inner + i;
              dot += self.grad[idx] * self.value[idx];
            }
            for (std::size_t k = 0; k < sp.axis; ++k) {
              const std::size_t idx = (o * sp.axis + k) * sp.inner + i;
              an->grad[idx] += self.value[idx] * (self.grad[idx] - dot);
            }
          }
      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  auto an = a.node();
  return make_op_result("sum", {1}, {acc}, {a}, [an](detail::Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < an->grad.size(); ++i)
      an->grad[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.size());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  acc *= inv;
  auto an = a.node();
  return make_op_result("mean", {1}, {acc}, {a}, [an, inv](detail::Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < an->grad.size(); ++i)
      an->grad[i] += self.grad[0] * inv;
  });
}

}  // namespace fspnet
