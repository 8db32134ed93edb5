#pragma once

// Dense f64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to an immutable row-major buffer. Operations on
// tensors that require gradients record a graph node holding the inputs and a
// backward rule; backward() walks the graph in reverse topological order and
// accumulates d(loss)/d(leaf) into every tracked leaf. Data is never aliased
// between tensors: reshape and friends copy.
//
// A graph is confined to one thread. Distinct graphs may be built and
// differentiated concurrently as long as they share no tracked leaves.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fmv2 {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

enum class OpKind {
  kLeaf,
  kMatmul,
  kTranspose,
  kReshape,
  kPermute,
  kAdd,
  kMul,
  kScale,
  kRelu,
  kSigmoid,
  kSoftmax,
  kMean,
  kMax,
  kSum,
  kConcat,
  kSlice,
  kAffine,
  kScaleLastDim,
  kRepeat,
  kStandardize,
  kCrossEntropy,
};

const char* op_name(OpKind kind);

namespace detail {

struct Node;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using ImplPtr = std::shared_ptr<TensorImpl>;
using BackwardFn = std::function<void(const TensorImpl& out, std::span<const ImplPtr> inputs)>;

struct Node {
  OpKind kind;
  std::vector<ImplPtr> inputs;
  BackwardFn backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor identity(std::size_t n);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view for leaves that are not part of a live graph (optimizer
  // updates, finite-difference perturbation).
  std::span<double> mutable_data();

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;  // zeros-length when no gradient
  void zero_grad();

  OpKind op() const;
  bool is_leaf() const;

  // Same values, new untracked leaf.
  Tensor detach() const;
  // Same values, new tracked leaf.
  Tensor as_leaf() const;

  // Internal: graph plumbing used by ops.
  const detail::ImplPtr& impl() const { return impl_; }
  static Tensor from_impl(detail::ImplPtr impl);

 private:
  detail::ImplPtr impl_;
};

// Builds the result of an operation. The node (and thus a backward edge) is
// attached only when at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> data, OpKind kind,
                   std::vector<detail::ImplPtr> inputs, detail::BackwardFn backward);

// Populates grad of every tracked leaf reachable from `loss` with
// d(loss)/d(leaf). Leaf gradients accumulate across calls; intermediate
// gradients are recomputed on each call.
void backward(const Tensor& loss);

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace fmv2
