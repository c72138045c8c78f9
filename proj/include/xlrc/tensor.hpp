#pragma once

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// Every operation below allocates a fresh output node that keeps shared
// ownership of its inputs plus a closure implementing the local vector-Jacobian
// product. Calling backward() on a scalar walks that graph in reverse
// topological order. Graphs are rebuilt on every forward pass.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xlrc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until the first gradient reaches the node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  // Adds `delta` into grad, allocating a zero buffer on first use.
  void accumulate(std::size_t index, double delta);
  double* grad_buffer();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t numel() const;
  // Row/column counts of a rank-2 tensor; ShapeError otherwise.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Parameter updates and initialization only; never call on graph outputs.
  std::span<double> mutable_values();
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Deep copy of shape and values as a new leaf.
  Tensor detach(bool requires_grad = false) const;

  const std::shared_ptr<detail::Node>& impl() const noexcept { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled() noexcept;

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[m×n] + b[n] broadcast across rows.
Tensor add_row_broadcast(const Tensor& x, const Tensor& bias);
// x·W + b.
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Row-wise softmax with row-max subtraction.
Tensor softmax_rows(const Tensor& x);
// Same, restricted to columns where allowed[j] is true; others get exactly 0.
// Every row must keep at least one column.
Tensor softmax_rows(const Tensor& x, const std::vector<bool>& allowed);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

inline constexpr double kLayerNormEps = 1e-5;
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = kLayerNormEps);

// tanh approximation of GELU.
Tensor gelu(const Tensor& x);
// Row lookup: out[i] = table[ids[i]].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
Tensor sum(const Tensor& x);
// Scalar holding x.values()[index].
Tensor pick(const Tensor& x, std::size_t index);
// log(max(x, floor)) elementwise; the floor keeps log finite.
Tensor log_clamped(const Tensor& x, double floor);
Tensor reshape(const Tensor& x, Shape shape);

// ---- reverse mode ---------------------------------------------------------

// Nodes reachable from root that take part in differentiation, inputs first.
std::vector<Tensor> topological_order(const Tensor& root);

// Populates grad of every requires_grad tensor reachable from a one-element
// loss. Leaf gradients accumulate across calls; see Tensor::zero_grad().
void backward(const Tensor& loss);

}  // namespace xlrc
