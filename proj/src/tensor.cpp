#include "fmv2/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "fmv2/errors.hpp"

namespace fmv2 {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kReshape: return "reshape";
    case OpKind::kPermute: return "permute";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kMean: return "mean";
    case OpKind::kMax: return "max";
    case OpKind::kSum: return "sum";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kAffine: return "affine";
    case OpKind::kScaleLastDim: return "scale_lastdim";
    case OpKind::kRepeat: return "repeat";
    case OpKind::kStandardize: return "standardize";
    case OpKind::kCrossEntropy: return "cross_entropy";
  }
  return "unknown";
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  if (numel_of(shape) != data.size())
    throw DimensionError("shape " + to_string(shape) + " needs " + std::to_string(numel_of(shape)) +
                         " values, got " + std::to_string(data.size()));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(shape, std::vector<double>(numel_of(shape), 0.0), requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  return Tensor(shape, std::vector<double>(numel_of(shape), value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(d));
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }

std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank())
    throw DimensionError("index rank " + std::to_string(index.size()) + " vs shape " +
                         to_string(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw DimensionError("index out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
void Tensor::zero_grad() { impl_->grad.clear(); }

OpKind Tensor::op() const { return impl_->node ? impl_->node->kind : OpKind::kLeaf; }
bool Tensor::is_leaf() const { return !impl_->node; }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }
Tensor Tensor::as_leaf() const { return Tensor(impl_->shape, impl_->data, true); }

Tensor Tensor::from_impl(detail::ImplPtr impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tensor make_result(Shape shape, std::vector<double> data, OpKind kind,
                   std::vector<detail::ImplPtr> inputs, detail::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  const bool tracked = std::any_of(inputs.begin(), inputs.end(),
                                   [](const detail::ImplPtr& p) { return p->requires_grad; });
  if (tracked) {
    auto& impl = *out.impl();
    impl.requires_grad = true;
    impl.node = std::make_shared<detail::Node>(
        detail::Node{kind, std::move(inputs), std::move(backward)});
  }
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw ContractError("backward() on an untracked tensor");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      detail::TensorImpl* child = impl->node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  for (auto* impl : order)
    if (impl->node) impl->grad.assign(impl->data.size(), 0.0);
  loss.impl()->grad_buffer()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    if (!impl->node) continue;
    impl->node->backward(*impl, impl->node->inputs);
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff shapes " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace fmv2
