#include "nightcap/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "nightcap/error.hpp"

namespace nightcap {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;

MatrixMap as_matrix(Buffer& v, std::size_t rows, std::size_t cols) {
  return MatrixMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

NodePtr make_node(Shape shape, Buffer value, bool requires_grad, bool leaf) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->leaf = leaf;
  return node;
}

bool needs_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

// Builds an op output; `make_backward` is invoked only when the output is
// differentiable, and receives the output node.
template <typename MakeBackward>
Tensor emit(Tape& tape, Shape shape, Buffer value, bool differentiable,
            MakeBackward&& make_backward) {
  auto node = make_node(std::move(shape), std::move(value), differentiable, false);
  if (differentiable) tape.record(node, make_backward(node.get()));
  return Tensor(node);
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require_defined(t, op);
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " tensor, got shape " + to_string(t.shape()));
  }
}

template <typename Forward, typename Derivative>
Tensor unary(Tape& tape, const Tensor& x, Forward f, Derivative df_from_output) {
  require_defined(x, "unary op");
  Buffer out(x.size());
  std::transform(x.data().begin(), x.data().end(), out.begin(), f);
  const bool diff = needs_grad(tape, {&x});
  return emit(tape, x.shape(), std::move(out), diff, [&](TensorNode* o) {
    NodePtr in = x.node();
    return std::function<void()>([in, o, df_from_output] {
      auto& g = in->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += o->grad[i] * df_from_output(in->value[i], o->value[i]);
      }
    });
  });
}

}  // namespace

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  const std::size_t n = element_count(shape);
  return Tensor(make_node(std::move(shape), Buffer(n, value), requires_grad, true));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }
  if (element_count(shape) != data.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  return Tensor(make_node(std::move(shape), Buffer(data.begin(), data.end()), requires_grad, true));
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
  return from({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(make_node(node_->shape, node_->value, requires_grad, true));
}

// ---------------------------------------------------------------------------
// Tape

void Tape::record(std::shared_ptr<TensorNode> output, std::function<void()> backward) {
  if (!recording_) return;
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any differentiable tensor");
  }
  if (loss.is_leaf()) {
    loss.node()->ensure_grad()[0] += 1.0;
    return;
  }
  for (auto& e : entries_) e.output->grad.clear();
  loss.node()->ensure_grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on a path to the loss
    it->backward();
  }
}

namespace ops {

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + to_string(a.shape()) +
                         " x " + to_string(b.shape()));
  }
  Buffer out(m * n);
  as_matrix(out, m, n).noalias() = as_matrix(a.node()->value, m, k) * as_matrix(b.node()->value, k, n);
  const bool diff = needs_grad(tape, {&a, &b});
  return emit(tape, {m, n}, std::move(out), diff, [&](TensorNode* o) {
    NodePtr an = a.node(), bn = b.node();
    return std::function<void()>([an, bn, o, m, k, n] {
      auto dc = as_matrix(o->grad, m, n);
      if (an->requires_grad) {
        as_matrix(an->ensure_grad(), m, k).noalias() += dc * as_matrix(bn->value, k, n).transpose();
      }
      if (bn->requires_grad) {
        as_matrix(bn->ensure_grad(), k, n).noalias() += as_matrix(an->value, m, k).transpose() * dc;
      }
    });
  });
}

Tensor vecmat(Tape& tape, const Tensor& x, const Tensor& w) {
  require_rank(x, 1, "vecmat");
  require_rank(w, 2, "vecmat");
  if (w.dim(0) != x.dim(0)) {
    throw DimensionError("vecmat: vector " + to_string(x.shape()) + " does not match matrix " +
                         to_string(w.shape()));
  }
  const std::size_t n = x.dim(0), m = w.dim(1);
  Buffer out(m, 0.0);
  {
    Eigen::Map<Eigen::RowVectorXd> o(out.data(), static_cast<Eigen::Index>(m));
    Eigen::Map<const Eigen::RowVectorXd> xv(x.node()->value.data(), static_cast<Eigen::Index>(n));
    o.noalias() = xv * as_matrix(w.node()->value, n, m);
  }
  const bool diff = needs_grad(tape, {&x, &w});
  return emit(tape, {m}, std::move(out), diff, [&](TensorNode* o) {
    NodePtr xn = x.node(), wn = w.node();
    return std::function<void()>([xn, wn, o, n, m] {
      Eigen::Map<const Eigen::RowVectorXd> dy(o->grad.data(), static_cast<Eigen::Index>(m));
      if (xn->requires_grad) {
        Eigen::Map<Eigen::RowVectorXd> dx(xn->ensure_grad().data(), static_cast<Eigen::Index>(n));
        dx.noalias() += dy * as_matrix(wn->value, n, m).transpose();
      }
      if (wn->requires_grad) {
        Eigen::Map<const Eigen::VectorXd> xv(xn->value.data(), static_cast<Eigen::Index>(n));
        as_matrix(wn->ensure_grad(), n, m).noalias() += xv * dy;
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  const bool diff = needs_grad(tape, {&a, &b});
  if (a.shape() == b.shape()) {
    Buffer out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return emit(tape, a.shape(), std::move(out), diff, [&](TensorNode* o) {
      NodePtr an = a.node(), bn = b.node();
      return std::function<void()>([an, bn, o] {
        for (auto* in : {an.get(), bn.get()}) {
          if (!in->requires_grad) continue;
          auto& g = in->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
        }
      });
    });
  }
  if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) {
    const std::size_t width = b.dim(0), rows = a.size() / width;
    Buffer out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < width; ++j) out[r * width + j] = a[r * width + j] + b[j];
    }
    return emit(tape, a.shape(), std::move(out), diff, [&](TensorNode* o) {
      NodePtr an = a.node(), bn = b.node();
      return std::function<void()>([an, bn, o, rows, width] {
        if (an->requires_grad) {
          auto& g = an->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
        }
        if (bn->requires_grad) {
          auto& g = bn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) g[j] += o->grad[r * width + j];
          }
        }
      });
    });
  }
  throw DimensionError("add: incompatible shapes " + to_string(a.shape()) + " and " +
                       to_string(b.shape()));
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  if (a.shape() != b.shape()) {
    throw DimensionError("sub: shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  const bool diff = needs_grad(tape, {&a, &b});
  return emit(tape, a.shape(), std::move(out), diff, [&](TensorNode* o) {
    NodePtr an = a.node(), bn = b.node();
    return std::function<void()>([an, bn, o] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o->grad[i];
      }
    });
  });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Buffer out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool diff = needs_grad(tape, {&a, &b});
  return emit(tape, a.shape(), std::move(out), diff, [&](TensorNode* o) {
    NodePtr an = a.node(), bn = b.node();
    return std::function<void()>([an, bn, o] {
      if (an->requires_grad) {
        auto& g = an->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        auto& g = bn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * an->value[i];
      }
    });
  });
}

Tensor affine(Tape& tape, const Tensor& x, double scale, double shift) {
  return unary(
      tape, x, [scale, shift](double v) { return scale * v + shift; },
      [scale](double, double) { return scale; });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(
      tape, x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Softmax

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis) {
  require_defined(x, "softmax");
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(x.shape()));
  }
  const auto& shape = x.shape();
  const std::size_t len = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];

  Buffer out(x.size());
  const auto& in = x.node()->value;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      double peak = in[base];
      for (std::size_t i = 1; i < len; ++i) peak = std::max(peak, in[base + i * inner]);
      double total = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        out[base + i * inner] = std::exp(in[base + i * inner] - peak);
        total += out[base + i * inner];
      }
      for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= total;
    }
  }
  const bool diff = needs_grad(tape, {&x});
  return emit(tape, shape, std::move(out), diff, [&](TensorNode* o) {
    NodePtr xn = x.node();
    return std::function<void()>([xn, o, outer, inner, len] {
      auto& g = xn->ensure_grad();
      for (std::size_t oi = 0; oi < outer; ++oi) {
        for (std::size_t j = 0; j < inner; ++j) {
          const std::size_t base = oi * len * inner + j;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) {
            dot += o->grad[base + i * inner] * o->value[base + i * inner];
          }
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t p = base + i * inner;
            g[p] += o->value[p] * (o->grad[p] - dot);
          }
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(Tape& tape, std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Tensor& first = parts.front();
  require_defined(first, "concat");
  if (axis >= first.rank()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(first.shape()));
  }
  Shape shape = first.shape();
  shape[axis] = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat");
    bool ok = p.rank() == first.rank();
    for (std::size_t i = 0; ok && i < p.rank(); ++i) {
      if (i != axis && p.dim(i) != first.dim(i)) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: shape " + to_string(p.shape()) + " incompatible with " +
                           to_string(first.shape()) + " along axis " + std::to_string(axis));
    }
    shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t out_row = shape[axis] * inner;

  Buffer out(element_count(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  bool diff = false;
  for (const auto& p : parts) {
    const std::size_t chunk = p.dim(axis) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  out.begin() + static_cast<std::ptrdiff_t>(o * out_row + offset));
    }
    offsets.push_back(offset);
    offset += chunk;
    diff = diff || needs_grad(tape, {&p});
  }
  return emit(tape, std::move(shape), std::move(out), diff, [&](TensorNode* o) {
    std::vector<NodePtr> nodes;
    std::vector<std::size_t> chunks;
    for (const auto& p : parts) {
      nodes.push_back(p.node());
      chunks.push_back(p.dim(axis) * inner);
    }
    return std::function<void()>([nodes, chunks, offsets, o, outer, out_row] {
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        if (!nodes[k]->requires_grad) continue;
        auto& g = nodes[k]->ensure_grad();
        for (std::size_t oi = 0; oi < outer; ++oi) {
          for (std::size_t i = 0; i < chunks[k]; ++i) {
            g[oi * chunks[k] + i] += o->grad[oi * out_row + offsets[k] + i];
          }
        }
      }
    });
  });
}

Tensor concat(Tape& tape, std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(tape, std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (element_count(shape) != x.size() || std::count(shape.begin(), shape.end(), 0u) > 0) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                         to_string(shape));
  }
  const bool diff = needs_grad(tape, {&x});
  return emit(tape, std::move(shape), x.node()->value, diff, [&](TensorNode* o) {
    NodePtr xn = x.node();
    return std::function<void()>([xn, o] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    });
  });
}

Tensor transpose(Tape& tape, const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Buffer out(r * c);
  as_matrix(out, c, r) = as_matrix(x.node()->value, r, c).transpose();
  const bool diff = needs_grad(tape, {&x});
  return emit(tape, {c, r}, std::move(out), diff, [&](TensorNode* o) {
    NodePtr xn = x.node();
    return std::function<void()>([xn, o, r, c] {
      as_matrix(xn->ensure_grad(), r, c) += as_matrix(o->grad, c, r).transpose();
    });
  });
}

Tensor embedding(Tape& tape, const Tensor& table, std::size_t row) {
  require_rank(table, 2, "embedding");
  if (row >= table.dim(0)) {
    throw DataError("embedding: row " + std::to_string(row) + " out of range for table " +
                    to_string(table.shape()));
  }
  const std::size_t width = table.dim(1);
  Buffer out(table.data().begin() + static_cast<std::ptrdiff_t>(row * width),
                          table.data().begin() + static_cast<std::ptrdiff_t>((row + 1) * width));
  const bool diff = needs_grad(tape, {&table});
  return emit(tape, {width}, std::move(out), diff, [&](TensorNode* o) {
    NodePtr tn = table.node();
    return std::function<void()>([tn, o, row, width] {
      auto& g = tn->ensure_grad();
      for (std::size_t j = 0; j < width; ++j) g[row * width + j] += o->grad[j];
    });
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(Tape& tape, const Tensor& x) {
  require_defined(x, "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  const bool diff = needs_grad(tape, {&x});
  return emit(tape, {1}, {total}, diff, [&](TensorNode* o) {
    NodePtr xn = x.node();
    return std::function<void()>([xn, o] {
      auto& g = xn->ensure_grad();
      for (auto& v : g) v += o->grad[0];
    });
  });
}

Tensor mean(Tape& tape, const Tensor& x) {
  require_defined(x, "mean");
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double n = static_cast<double>(x.size());
  const bool diff = needs_grad(tape, {&x});
  return emit(tape, {1}, {total / n}, diff, [&](TensorNode* o) {
    NodePtr xn = x.node();
    return std::function<void()>([xn, o, n] {
      auto& g = xn->ensure_grad();
      for (auto& v : g) v += o->grad[0] / n;
    });
  });
}

Tensor mean_rows(Tape& tape, const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Buffer out(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += x[r * cols + c];
  }
  for (auto& v : out) v /= static_cast<double>(rows);
  const bool diff = needs_grad(tape, {&x});
  return emit(tape, {cols}, std::move(out), diff, [&](TensorNode* o) {
    NodePtr xn = x.node();
    return std::function<void()>([xn, o, rows, cols] {
      auto& g = xn->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          g[r * cols + c] += o->grad[c] / static_cast<double>(rows);
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

namespace {

struct ConvGeometry {
  std::size_t c_in, h, w, c_out, k, stride, padding, out_h, out_w;
  std::size_t patch() const { return c_in * k * k; }
  std::size_t positions() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernels, std::size_t stride,
                           std::size_t padding) {
  require_rank(input, 3, "conv2d");
  require_rank(kernels, 4, "conv2d");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{};
  g.c_in = input.dim(0);
  g.h = input.dim(1);
  g.w = input.dim(2);
  g.c_out = kernels.dim(0);
  g.k = kernels.dim(2);
  g.stride = stride;
  g.padding = padding;
  if (kernels.dim(1) != g.c_in || kernels.dim(3) != g.k) {
    throw DimensionError("conv2d: kernels " + to_string(kernels.shape()) +
                         " do not fit input " + to_string(input.shape()));
  }
  if (g.k > g.h + 2 * padding || g.k > g.w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + to_string(kernels.shape()) +
                         " larger than padded input " + to_string(input.shape()));
  }
  g.out_h = (g.h + 2 * padding - g.k) / stride + 1;
  g.out_w = (g.w + 2 * padding - g.k) / stride + 1;
  return g;
}

// cols[(c, ky, kx) × (oy, ox)]
Buffer im2col(const Buffer& x, const ConvGeometry& g) {
  Buffer cols(g.patch() * g.positions(), 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = cols.data() + ((c * g.k + ky) * g.k + kx) * g.positions();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          const double* src = x.data() + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            row[oy * g.out_w + ox] = src[ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_accumulate(const Buffer& cols, const ConvGeometry& g,
                       Buffer& dx) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.c_in; ++c) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = cols.data() + ((c * g.k + ky) * g.k + kx) * g.positions();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = dx.data() + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            dst[ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

Tensor conv2d_impl(Tape& tape, const Tensor& input, const Tensor& kernels, const Tensor* bias,
                   std::size_t stride, std::size_t padding) {
  const ConvGeometry g = conv_geometry(input, kernels, stride, padding);
  if (bias != nullptr && (bias->rank() != 1 || bias->dim(0) != g.c_out)) {
    throw DimensionError("conv2d: bias " + to_string(bias->shape()) + " does not match " +
                         std::to_string(g.c_out) + " output channels");
  }
  auto cols = std::make_shared<Buffer>(im2col(input.node()->value, g));
  Buffer out(g.c_out * g.positions());
  as_matrix(out, g.c_out, g.positions()).noalias() =
      as_matrix(kernels.node()->value, g.c_out, g.patch()) * as_matrix(*cols, g.patch(), g.positions());
  if (bias != nullptr) {
    for (std::size_t co = 0; co < g.c_out; ++co) {
      const double b = (*bias)[co];
      for (std::size_t p = 0; p < g.positions(); ++p) out[co * g.positions() + p] += b;
    }
  }
  const bool diff = bias != nullptr ? needs_grad(tape, {&input, &kernels, bias})
                                    : needs_grad(tape, {&input, &kernels});
  return emit(tape, {g.c_out, g.out_h, g.out_w}, std::move(out), diff, [&](TensorNode* o) {
    NodePtr xn = input.node(), kn = kernels.node();
    NodePtr bn = bias != nullptr ? bias->node() : nullptr;
    return std::function<void()>([xn, kn, bn, o, cols, g] {
      auto dout = as_matrix(o->grad, g.c_out, g.positions());
      if (kn->requires_grad) {
        as_matrix(kn->ensure_grad(), g.c_out, g.patch()).noalias() +=
            dout * as_matrix(*cols, g.patch(), g.positions()).transpose();
      }
      if (bn && bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (std::size_t co = 0; co < g.c_out; ++co) gb[co] += dout.row(static_cast<Eigen::Index>(co)).sum();
      }
      if (xn->requires_grad) {
        Buffer dcols(g.patch() * g.positions());
        as_matrix(dcols, g.patch(), g.positions()).noalias() =
            as_matrix(kn->value, g.c_out, g.patch()).transpose() * dout;
        col2im_accumulate(dcols, g, xn->ensure_grad());
      }
    });
  });
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding) {
  return conv2d_impl(tape, input, kernels, nullptr, stride, padding);
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  return conv2d_impl(tape, input, kernels, &bias, stride, padding);
}

Tensor max_pool2d(Tape& tape, const Tensor& x, std::size_t window) {
  require_rank(x, 3, "max_pool2d");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window == 0 || h < window || w < window) {
    throw DimensionError("max_pool2d: window " + std::to_string(window) +
                         " does not fit input " + to_string(x.shape()));
  }
  const std::size_t oh = h / window, ow = w / window;
  Buffer out(c * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto& in = x.node()->value;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (ch * h + oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t p = (ch * h + oy * window + dy) * w + ox * window + dx;
            if (in[p] > in[best]) best = p;
          }
        }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[o] = best;
      }
    }
  }
  const bool diff = needs_grad(tape, {&x});
  return emit(tape, {c, oh, ow}, std::move(out), diff, [&](TensorNode* o) {
    NodePtr xn = x.node();
    return std::function<void()>([xn, o, argmax = std::move(argmax)] {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o->grad[i];
    });
  });
}

// ---------------------------------------------------------------------------
// Loss

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets,
                     std::span<const unsigned char> mask) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries for logits " +
                         to_string(logits.shape()));
  }
  const auto& z = logits.node()->value;
  Buffer probs(rows * classes, 0.0);
  double total = 0.0;
  std::size_t active = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] >= classes) {
      throw DataError("cross_entropy: target " + std::to_string(targets[r]) +
                      " out of range for " + std::to_string(classes) + " classes");
    }
    const double* row = z.data() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      probs[r * classes + j] = std::exp(row[j] - peak);
      denom += probs[r * classes + j];
    }
    for (std::size_t j = 0; j < classes; ++j) probs[r * classes + j] /= denom;
    total += std::log(denom) + peak - row[targets[r]];
    ++active;
  }
  if (active == 0) throw ContractError("cross_entropy: every position is masked");
  const double n = static_cast<double>(active);
  const bool diff = needs_grad(tape, {&logits});
  return emit(tape, {1}, {total / n}, diff, [&](TensorNode* o) {
    NodePtr ln = logits.node();
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    std::vector<unsigned char> msk(mask.begin(), mask.end());
    return std::function<void()>(
        [ln, o, probs = std::move(probs), tgt = std::move(tgt), msk = std::move(msk), rows, classes, n] {
          auto& g = ln->ensure_grad();
          const double scale = o->grad[0] / n;
          for (std::size_t r = 0; r < rows; ++r) {
            if (!msk[r]) continue;
            for (std::size_t j = 0; j < classes; ++j) {
              g[r * classes + j] += scale * (probs[r * classes + j] - (j == tgt[r] ? 1.0 : 0.0));
            }
          }
        });
  });
}

}  // namespace ops

std::vector<double> softmax_values(std::span<const double> x) {
  if (x.empty()) throw DimensionError("softmax: empty input");
  const double peak = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - peak);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

}  // namespace nightcap
