#include "xlrc/tensor.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "xlrc/error.hpp"

namespace xlrc {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<detail::Node>;

void require_rank2(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw ShapeError(fmt::format("{}: expected a matrix, got shape {}", op,
                                 shape_to_string(t.shape())));
  }
}

// Creates an output node; records inputs only when some input needs gradients
// and recording is enabled.
NodePtr make_output(Shape shape, std::vector<double> values, const char* op,
                    std::initializer_list<const Tensor*> inputs) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  if (!g_grad_enabled) return node;
  for (const Tensor* in : inputs) {
    if (in->requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor* in : inputs) node->inputs.push_back(in->impl());
  }
  return node;
}

NodePtr make_output(Shape shape, std::vector<double> values, const char* op,
                    std::span<const Tensor> inputs) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->op = op;
  if (!g_grad_enabled) return node;
  for (const Tensor& in : inputs) {
    if (in.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor& in : inputs) node->inputs.push_back(in.impl());
  }
  return node;
}

bool wants_grad(const NodePtr& n) { return n->requires_grad; }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, "x"));
}

namespace detail {

double* Node::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad.data();
}

void Node::accumulate(std::size_t index, double delta) { grad_buffer()[index] += delta; }

}  // namespace detail

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0 && shape.size() != 2) {
      throw ShapeError(fmt::format("dimension 0 in shape {}", shape_to_string(shape)));
    }
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError(fmt::format("shape {} needs {} values, got {}", shape_to_string(shape),
                                 shape_numel(shape), values.size()));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return from({n, n}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->values.size(); }

std::size_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return node_->shape[1];
}

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::at(std::size_t row, std::size_t col) const {
  return node_->values[row * cols() + col];
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError(fmt::format("item() on tensor of shape {}", shape_to_string(shape())));
  }
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach(bool requires_grad) const {
  return from(shape(), node_->values, requires_grad);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() noexcept { return g_grad_enabled; }

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError(fmt::format("matmul: inner dimensions differ for {} and {}",
                                 shape_to_string(a.shape()), shape_to_string(b.shape())));
  }
  const double* av = a.values().data();
  const double* bv = b.values().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  auto node = make_output({m, n}, std::move(out), "matmul", {&a, &b});
  if (node->requires_grad) {
    node->backward_fn = [m, k, n](detail::Node& self) {
      const NodePtr& an = self.inputs[0];
      const NodePtr& bn = self.inputs[1];
      const double* g = self.grad.data();
      if (wants_grad(an)) {
        double* ga = an->grad_buffer();
        const double* bv = bn->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (wants_grad(bn)) {
        double* gb = bn->grad_buffer();
        const double* av = an->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
          }
      }
    };
  }
  return Tensor(node);
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  const double* xv = x.values().data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  auto node = make_output({n, m}, std::move(out), "transpose", {&x});
  if (node->requires_grad) {
    node->backward_fn = [m, n](detail::Node& self) {
      double* gx = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self.grad[j * m + i];
    };
  }
  return Tensor(node);
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("add: shapes {} and {} differ", shape_to_string(a.shape()),
                                 shape_to_string(b.shape())));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  auto node = make_output(a.shape(), std::move(out), "add", {&a, &b});
  if (node->requires_grad) {
    node->backward_fn = [](detail::Node& self) {
      for (const NodePtr& in : self.inputs) {
        if (!wants_grad(in)) continue;
        double* g = in->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    };
  }
  return Tensor(node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("mul: shapes {} and {} differ", shape_to_string(a.shape()),
                                 shape_to_string(b.shape())));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  auto node = make_output(a.shape(), std::move(out), "mul", {&a, &b});
  if (node->requires_grad) {
    node->backward_fn = [](detail::Node& self) {
      const NodePtr& an = self.inputs[0];
      const NodePtr& bn = self.inputs[1];
      if (wants_grad(an)) {
        double* g = an->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->values[i];
      }
      if (wants_grad(bn)) {
        double* g = bn->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->values[i];
      }
    };
  }
  return Tensor(node);
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  auto node = make_output(x.shape(), std::move(out), "scale", {&x});
  if (node->requires_grad) {
    node->backward_fn = [factor](detail::Node& self) {
      double* g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    };
  }
  return Tensor(node);
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_row_broadcast");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n || bias.dim() != 1) {
    throw ShapeError(fmt::format("add_row_broadcast: bias {} does not match {} columns",
                                 shape_to_string(bias.shape()), n));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.values()[j];
  auto node = make_output({m, n}, std::move(out), "add_row_broadcast", {&x, &bias});
  if (node->requires_grad) {
    node->backward_fn = [m, n](detail::Node& self) {
      const NodePtr& xn = self.inputs[0];
      const NodePtr& bn = self.inputs[1];
      if (wants_grad(xn)) {
        double* g = xn->grad_buffer();
        for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
      }
      if (wants_grad(bn)) {
        double* g = bn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
      }
    };
  }
  return Tensor(node);
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(x, "affine");
  require_rank2(weight, "affine");
  if (x.cols() != weight.rows() || bias.dim() != 1 || bias.numel() != weight.cols()) {
    throw ShapeError(fmt::format("affine: incompatible shapes x {}, W {}, b {}",
                                 shape_to_string(x.shape()), shape_to_string(weight.shape()),
                                 shape_to_string(bias.shape())));
  }
  return add_row_broadcast(matmul(x, weight), bias);
}

namespace {

Tensor softmax_impl(const Tensor& x, const std::vector<bool>* allowed) {
  require_rank2(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (allowed != nullptr) {
    if (allowed->size() != n) {
      throw ShapeError(fmt::format("softmax_rows: mask of length {} for {} columns",
                                   allowed->size(), n));
    }
    if (std::none_of(allowed->begin(), allowed->end(), [](bool b) { return b; })) {
      throw ContractError("softmax_rows: every column is masked");
    }
  }
  auto keep = [&](std::size_t j) { return allowed == nullptr || (*allowed)[j]; };
  const double* xv = x.values().data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (keep(j)) row_max = std::max(row_max, xv[i * n + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!keep(j)) continue;
      out[i * n + j] = std::exp(xv[i * n + j] - row_max);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  auto node = make_output({m, n}, std::move(out), "softmax_rows", {&x});
  if (node->requires_grad) {
    // Masked outputs are exactly zero, so the unmasked formula gives them zero gradient.
    node->backward_fn = [m, n](detail::Node& self) {
      double* gx = self.inputs[0]->grad_buffer();
      const double* y = self.values.data();
      const double* g = self.grad.data();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += y[i * n + j] * g[i * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
      }
    };
  }
  return Tensor(node);
}

}  // namespace

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, nullptr); }

Tensor softmax_rows(const Tensor& x, const std::vector<bool>& allowed) {
  return softmax_impl(x, &allowed);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const Tensor parts[] = {a, b};
  return concat_cols(parts);
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  for (const Tensor& p : parts) require_rank2(p, "concat_cols");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != m) {
      throw ShapeError(fmt::format("concat_cols: row counts differ ({} vs {})",
                                   shape_to_string(parts[0].shape()), shape_to_string(p.shape())));
    }
    offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].cols();
    const double* pv = parts[k].values().data();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv + i * w, w, out.begin() + static_cast<std::ptrdiff_t>(i * total + offsets[k]));
  }
  auto node = make_output({m, total}, std::move(out), "concat_cols", parts);
  if (node->requires_grad) {
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) widths.push_back(p.cols());
    node->backward_fn = [m, total, offsets, widths](detail::Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        if (!wants_grad(self.inputs[k])) continue;
        double* g = self.inputs[k]->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            g[i * widths[k] + j] += self.grad[i * total + offsets[k] + j];
      }
    };
  }
  return Tensor(node);
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t m = x.rows(), n = x.cols();
  if (begin > end || end > n) {
    throw ShapeError(fmt::format("slice_cols: [{}, {}) out of range for {}", begin, end,
                                 shape_to_string(x.shape())));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x.values()[i * n + begin + j];
  auto node = make_output({m, w}, std::move(out), "slice_cols", {&x});
  if (node->requires_grad) {
    node->backward_fn = [m, n, w, begin](detail::Node& self) {
      double* g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
    };
  }
  return Tensor(node);
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank2(x, "layer_norm_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw ShapeError("layer_norm_rows: zero columns");
  if (gamma.dim() != 1 || gamma.numel() != n || beta.dim() != 1 || beta.numel() != n) {
    throw ShapeError(fmt::format("layer_norm_rows: gamma {} / beta {} do not match {} columns",
                                 shape_to_string(gamma.shape()), shape_to_string(beta.shape()), n));
  }
  const double* xv = x.values().data();
  std::vector<double> normalized(m * n), inv_std(m), out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[i * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      normalized[i * n + j] = (xv[i * n + j] - mean) * inv_std[i];
      out[i * n + j] = normalized[i * n + j] * gamma.values()[j] + beta.values()[j];
    }
  }
  auto node = make_output({m, n}, std::move(out), "layer_norm_rows", {&x, &gamma, &beta});
  if (node->requires_grad) {
    node->backward_fn = [m, n, normalized = std::move(normalized),
                         inv_std = std::move(inv_std)](detail::Node& self) {
      const NodePtr& xn = self.inputs[0];
      const NodePtr& gn = self.inputs[1];
      const NodePtr& bn = self.inputs[2];
      const double* g = self.grad.data();
      if (wants_grad(gn)) {
        double* gg = gn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * normalized[i * n + j];
      }
      if (wants_grad(bn)) {
        double* gb = bn->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
      if (wants_grad(xn)) {
        double* gx = xn->grad_buffer();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = g[i * n + j] * gn->values[j];
            mean_d += d;
            mean_dx += d * normalized[i * n + j];
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = g[i * n + j] * gn->values[j];
            gx[i * n + j] += inv_std[i] * (d - mean_d - normalized[i * n + j] * mean_dx);
          }
        }
      }
    };
  }
  return Tensor(node);
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  auto node = make_output(x.shape(), std::move(out), "gelu", {&x});
  if (node->requires_grad) {
    node->backward_fn = [](detail::Node& self) {
      const NodePtr& xn = self.inputs[0];
      double* g = xn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double v = xn->values[i];
        const double t = std::tanh(kC * (v + kA * v * v * v));
        const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
        g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
    };
  }
  return Tensor(node);
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank2(table, "gather_rows");
  const std::size_t rows = table.rows(), n = table.cols();
  std::vector<double> out(ids.size() * n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw ShapeError(fmt::format("gather_rows: index {} out of range for {} rows", ids[i], rows));
    }
    std::copy_n(table.values().begin() + static_cast<std::ptrdiff_t>(ids[i] * n), n,
                out.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  auto node = make_output({ids.size(), n}, std::move(out), "gather_rows", {&table});
  if (node->requires_grad) {
    node->backward_fn = [n, index = std::vector<std::size_t>(ids.begin(), ids.end())](
                            detail::Node& self) {
      double* g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < index.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) g[index[i] * n + j] += self.grad[i * n + j];
    };
  }
  return Tensor(node);
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  auto node = make_output({}, {total}, "sum", {&x});
  if (node->requires_grad) {
    node->backward_fn = [](detail::Node& self) {
      double* g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.inputs[0]->values.size(); ++i) g[i] += self.grad[0];
    };
  }
  return Tensor(node);
}

Tensor pick(const Tensor& x, std::size_t index) {
  if (index >= x.numel()) {
    throw ShapeError(fmt::format("pick: index {} out of range for {}", index,
                                 shape_to_string(x.shape())));
  }
  auto node = make_output({}, {x.values()[index]}, "pick", {&x});
  if (node->requires_grad) {
    node->backward_fn = [index](detail::Node& self) {
      self.inputs[0]->accumulate(index, self.grad[0]);
    };
  }
  return Tensor(node);
}

Tensor log_clamped(const Tensor& x, double floor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(x.values()[i], floor));
  auto node = make_output(x.shape(), std::move(out), "log_clamped", {&x});
  if (node->requires_grad) {
    node->backward_fn = [floor](detail::Node& self) {
      const NodePtr& xn = self.inputs[0];
      double* g = xn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xn->values[i] > floor) g[i] += self.grad[i] / xn->values[i];
      }
    };
  }
  return Tensor(node);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError(fmt::format("reshape: {} to {} changes element count",
                                 shape_to_string(x.shape()), shape_to_string(shape)));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  auto node = make_output(std::move(shape), std::move(out), "reshape", {&x});
  if (node->requires_grad) {
    node->backward_fn = [](detail::Node& self) {
      double* g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    };
  }
  return Tensor(node);
}

// ---- reverse mode ---------------------------------------------------------

std::vector<Tensor> topological_order(const Tensor& root) {
  std::vector<Tensor> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<const detail::Node*> visited;
  // Iterative post-order DFS: (node, next input index to visit).
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const NodePtr& child = node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.emplace_back(node);
    stack.pop_back();
  }
  return order;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError(fmt::format("backward: loss must be a scalar, got shape {}",
                                    loss.defined() ? shape_to_string(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss was not produced by recorded operations");
  }
  std::vector<Tensor> order = topological_order(loss);
  // Interior nodes start from zero on every call; only leaves accumulate.
  for (Tensor& t : order) {
    if (t.impl()->backward_fn) t.impl()->grad.clear();
  }
  loss.impl()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node& node = *it->impl();
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
  }
}

}  // namespace xlrc
