#pragma once

// Dense row-major tensors of doubles with tape-based reverse-mode
// differentiation. Every op takes the Tape it records onto; a Tape built with
// recording disabled (Tape::inference()) evaluates without keeping closures.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace nightcap {

using Shape = std::vector<std::size_t>;

// Tensor storage starts on a 64-byte boundary. Eigen's vectorized kernels
// peel unaligned heads, so the summation order (and the last bits of every
// product) would otherwise depend on where the allocator placed the data.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  Buffer value;
  Buffer grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = true;

  Buffer& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const;

  /// In-place access for leaves (parameters, inputs). Never call on op outputs
  /// still referenced by a live tape.
  std::span<double> mutable_data() { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or an empty span before any backward pass reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  /// Deep copy of shape and data as a fresh leaf.
  Tensor clone(bool requires_grad) const;

  const std::shared_ptr<detail::TensorNode>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  static Tape inference() { return Tape(false); }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  /// Appends an op. `backward` reads output->grad and accumulates into inputs.
  void record(std::shared_ptr<detail::TensorNode> output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and replays every recorded op in reverse.
  /// Leaf gradients accumulate across calls; intermediate ones are reset.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }

 private:
  struct Entry {
    std::shared_ptr<detail::TensorNode> output;
    std::function<void()> backward;
  };
  bool recording_;
  std::vector<Entry> entries_;
};

namespace ops {

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
/// Row vector times matrix: x[n] · W[n×m] -> [m].
Tensor vecmat(Tape& tape, const Tensor& x, const Tensor& w);

/// Elementwise sum of equal shapes, or bias addition when `b` is a vector
/// matching the last axis of `a`.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
/// scale * x + shift, elementwise.
Tensor affine(Tape& tape, const Tensor& x, double scale, double shift = 0.0);

Tensor tanh(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);

Tensor softmax(Tape& tape, const Tensor& x, std::size_t axis = 0);

Tensor concat(Tape& tape, std::span<const Tensor> parts, std::size_t axis = 0);
Tensor concat(Tape& tape, std::initializer_list<Tensor> parts, std::size_t axis = 0);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
Tensor transpose(Tape& tape, const Tensor& x);

/// Row gather from a [V×E] table.
Tensor embedding(Tape& tape, const Tensor& table, std::size_t row);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);
/// Mean over axis 0 of a [n×d] matrix.
Tensor mean_rows(Tape& tape, const Tensor& x);

/// Cross-correlation of x[C_in×H×W] with kernels[C_out×C_in×k×k].
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, std::size_t stride,
              std::size_t padding);
/// Same, plus a per-output-channel bias[C_out].
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t padding);
/// Non-overlapping window max over the spatial axes of x[C×H×W].
Tensor max_pool2d(Tape& tape, const Tensor& x, std::size_t window = 2);

/// Mean token cross-entropy over rows of logits[T×V] whose mask entry is
/// nonzero. Throws ContractError when every row is masked.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const std::size_t> targets,
                     std::span<const unsigned char> mask);

}  // namespace ops

/// Plain (non-recording) helpers used by inference and tests.
std::vector<double> softmax_values(std::span<const double> x);

}  // namespace nightcap
