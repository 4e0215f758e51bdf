#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fspnet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/// Thrown when operand shapes do not conform; the message names the
/// operation and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;  // accumulates into parents' grads
  const char* op = "leaf";

  std::size_t size() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Globally disables graph construction while alive (inference / finite
/// difference probes). Leaf tensors keep their grad_enabled flag.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_mode_enabled();

/// Dense n-dimensional double tensor with reverse-mode differentiation.
/// Cheap to copy: a Tensor is a handle onto a shared node; nodes are
/// immutable once produced by an operation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  /// Identity matrix n x n.
  static Tensor eye(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->size(); }

  const std::vector<double>& values() const { return node_->value; }
  /// Mutable access; only meaningful for leaves (optimizer updates,
  /// buffer maintenance). Interior nodes are never mutated.
  std::vector<double>& mutable_values() { return node_->value; }

  double item() const;
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  void set_requires_grad(bool enabled);
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();

  /// Reverse-mode pass from a scalar tensor.
  void backward();

  /// Detached copy of the values as a fresh leaf.
  Tensor detach() const;

  const char* op_name() const { return node_->op; }

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op_result(const char* op, Shape shape,
                               std::vector<double> value,
                               std::vector<Tensor> inputs,
                               std::function<void(detail::Node&)> backward);
};

/// Internal helper used by every operation to wire the graph.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> value,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::Node&)> backward);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// a: m x n, v: length-n vector added to every row.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start,
             std::size_t len);

// ---- activations ----
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace fspnet
