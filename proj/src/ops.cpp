#include "fmv2/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "fmv2/errors.hpp"
#include "fmv2/kernels.hpp"

namespace fmv2 {

namespace {

using detail::ImplPtr;
using detail::TensorImpl;

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

bool wants_grad(const ImplPtr& p) { return p->requires_grad; }

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + to_string(t.shape()));
}

enum class Binary { kAdd, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind) {
  const char* name = kind == Binary::kAdd ? "add" : "mul";
  const bool same = a.shape() == b.shape();
  const bool b_scalar = !same && b.numel() == 1;
  const bool a_scalar = !same && !b_scalar && a.numel() == 1;
  if (!same && !a_scalar && !b_scalar)
    throw DimensionError(std::string(name) + ": cannot broadcast " + to_string(a.shape()) +
                         " with " + to_string(b.shape()));
  const Tensor& big = a_scalar ? b : a;
  const std::size_t n = big.numel();
  const auto ad = a.data();
  const auto bd = b.data();
  auto ai = [&](std::size_t i) { return a_scalar ? ad[0] : ad[i]; };
  auto bi = [&](std::size_t i) { return b_scalar ? bd[0] : bd[i]; };
  std::vector<double> out(n);
  if (kind == Binary::kAdd)
    for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) + bi(i);
  else
    for (std::size_t i = 0; i < n; ++i) out[i] = ai(i) * bi(i);

  return make_result(
      big.shape(), std::move(out), kind == Binary::kAdd ? OpKind::kAdd : OpKind::kMul,
      {a.impl(), b.impl()},
      [kind, a_scalar, b_scalar](const TensorImpl& o, std::span<const ImplPtr> in) {
        const auto& g = o.grad;
        const std::size_t n = g.size();
        const ImplPtr& pa = in[0];
        const ImplPtr& pb = in[1];
        for (int side = 0; side < 2; ++side) {
          const ImplPtr& self = side == 0 ? pa : pb;
          const ImplPtr& other = side == 0 ? pb : pa;
          const bool self_scalar = side == 0 ? a_scalar : b_scalar;
          const bool other_scalar = side == 0 ? b_scalar : a_scalar;
          if (!wants_grad(self)) continue;
          auto& sg = self->grad_buffer();
          for (std::size_t i = 0; i < n; ++i) {
            double d = g[i];
            if (kind == Binary::kMul) d *= other->data[other_scalar ? 0 : i];
            sg[self_scalar ? 0 : i] += d;
          }
        }
      });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions disagree, " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.data(), b.data(), out, m, k, n);
  return make_result({m, n}, std::move(out), OpKind::kMatmul, {a.impl(), b.impl()},
                     [m, k, n](const TensorImpl& o, std::span<const ImplPtr> in) {
                       if (wants_grad(in[0]))
                         kernels::gemm_nt(o.grad, in[1]->data, in[0]->grad_buffer(), m, n, k,
                                          kernels::Accumulate::kYes);
                       if (wants_grad(in[1]))
                         kernels::gemm_tn(in[0]->data, o.grad, in[1]->grad_buffer(), m, k, n,
                                          kernels::Accumulate::kYes);
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto d = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return make_result({c, r}, std::move(out), OpKind::kTranspose, {a.impl()},
                     [r, c](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel())
    throw DimensionError("reshape: " + to_string(a.shape()) + " to " + to_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), OpKind::kReshape, {a.impl()},
                     [](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                     });
}

namespace {

// Visits every output position in row-major order together with the source
// offset given per-axis source strides.
template <typename Fn>
void strided_walk(const Shape& out_shape, const std::vector<std::size_t>& step, Fn&& fn) {
  const std::size_t r = out_shape.size();
  const std::size_t inner = out_shape[r - 1], inner_step = step[r - 1];
  const std::size_t outer = numel_of(out_shape) / inner;
  std::vector<std::size_t> counter(r - 1, 0);
  std::size_t base = 0, flat = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) fn(flat++, base + i * inner_step);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      if (++counter[ax] < out_shape[ax]) {
        base += step[ax];
        break;
      }
      base -= step[ax] * (out_shape[ax] - 1);
      counter[ax] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
  const std::size_t r = a.rank();
  if (axes.size() != r) throw DimensionError("permute: axes length mismatch");
  std::vector<bool> seen(r, false);
  for (auto ax : axes) {
    if (ax >= r || seen[ax]) throw DimensionError("permute: invalid axis list");
    seen[ax] = true;
  }
  if (r == 0) return scale(a, 1.0);
  const Shape& in_shape = a.shape();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    step[i] = in_stride[axes[i]];
  }
  std::vector<double> out(a.numel());
  strided_walk(out_shape, step, [&, d = a.data()](std::size_t flat, std::size_t src) {
    out[flat] = d[src];
  });
  return make_result(out_shape, std::move(out), OpKind::kPermute, {a.impl()},
                     [out_shape, step](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       strided_walk(out_shape, step, [&](std::size_t flat, std::size_t src) {
                         g[src] += o.grad[flat];
                       });
                     });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return make_result(a.shape(), std::move(out), OpKind::kScale, {a.impl()},
                     [factor](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o.grad[i];
                     });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(a.shape(), std::move(out), OpKind::kRelu, {a.impl()},
                     [](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       const auto& x = in[0]->data;
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (x[i] > 0.0) g[i] += o.grad[i];
                     });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v = 1.0 / (1.0 + std::exp(-v));
  return make_result(a.shape(), std::move(out), OpKind::kSigmoid, {a.impl()},
                     [](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double y = o.data[i];
                         g[i] += o.grad[i] * y * (1.0 - y);
                       }
                     });
}

Tensor softmax_lastdim(const Tensor& a) {
  if (a.rank() == 0) throw DimensionError("softmax_lastdim on a rank-0 tensor");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * n;
    const double peak = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - peak);
      total += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  return make_result(a.shape(), std::move(out), OpKind::kSoftmax, {a.impl()},
                     [rows, n](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = o.data.data() + r * n;
                         const double* dy = o.grad.data() + r * n;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
                         for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
                       }
                     });
}

Tensor standardize_lastdim(const Tensor& a, double eps) {
  if (a.rank() == 0) throw DimensionError("standardize_lastdim on a rank-0 tensor");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  std::vector<double> out(a.data().begin(), a.data().end());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) row[j] = (row[j] - mu) * inv_std[r];
  }
  return make_result(a.shape(), std::move(out), OpKind::kStandardize, {a.impl()},
                     [rows, n, inv_std](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* y = o.data.data() + r * n;
                         const double* dy = o.grad.data() + r * n;
                         double mean_dy = 0.0, mean_dyy = 0.0;
                         for (std::size_t j = 0; j < n; ++j) {
                           mean_dy += dy[j];
                           mean_dyy += dy[j] * y[j];
                         }
                         mean_dy *= inv_n;
                         mean_dyy *= inv_n;
                         for (std::size_t j = 0; j < n; ++j)
                           g[r * n + j] += inv_std[r] * (dy[j] - mean_dy - y[j] * mean_dyy);
                       }
                     });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const auto s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l) {
      const double* src = d.data() + (o * s.len + l) * s.inner;
      double* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  const double inv = 1.0 / static_cast<double>(s.len);
  for (auto& v : out) v *= inv;
  return make_result(std::move(out_shape), std::move(out), OpKind::kMean, {a.impl()},
                     [s, inv](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t oi = 0; oi < s.outer; ++oi)
                         for (std::size_t l = 0; l < s.len; ++l)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             g[(oi * s.len + l) * s.inner + i] += o.grad[oi * s.inner + i] * inv;
                     });
}

Tensor max(const Tensor& a, std::size_t axis) {
  const auto s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner);
  auto arg = std::make_shared<std::vector<std::size_t>>(s.outer * s.inner);
  const auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.len * s.inner + i;
      for (std::size_t l = 1; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + i;
        if (d[idx] > d[best]) best = idx;
      }
      out[o * s.inner + i] = d[best];
      (*arg)[o * s.inner + i] = best;
    }
  return make_result(std::move(out_shape), std::move(out), OpKind::kMax, {a.impl()},
                     [arg](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < arg->size(); ++i) g[(*arg)[i]] += o.grad[i];
                     });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result(Shape{}, {total}, OpKind::kSum, {a.impl()},
                     [](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (auto& v : g) v += o.grad[0];
                     });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  split_at(first, axis);
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    if (p.rank() != first.size())
      throw DimensionError("concat: rank mismatch " + to_string(first) + " vs " +
                           to_string(p.shape()));
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && p.shape()[i] != first[i])
        throw DimensionError("concat: incompatible shapes " + to_string(first) + " and " +
                             to_string(p.shape()) + " on axis " + std::to_string(axis));
    lens.push_back(p.shape()[axis]);
    out_shape[axis] += p.shape()[axis];
  }
  const auto s = split_at(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<ImplPtr> inputs;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto d = parts[k].data();
    const std::size_t chunk = lens[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(d.data() + o * chunk, chunk, out.data() + o * s.len * s.inner + offset);
    offset += chunk;
    inputs.push_back(parts[k].impl());
  }
  return make_result(std::move(out_shape), std::move(out), OpKind::kConcat, std::move(inputs),
                     [s, lens](const TensorImpl& o, std::span<const ImplPtr> in) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < in.size(); ++k) {
                         const std::size_t chunk = lens[k] * s.inner;
                         if (wants_grad(in[k])) {
                           auto& g = in[k]->grad_buffer();
                           for (std::size_t oi = 0; oi < s.outer; ++oi) {
                             const double* src = o.grad.data() + oi * s.len * s.inner + off;
                             double* dst = g.data() + oi * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                           }
                         }
                         off += chunk;
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto s = split_at(a.shape(), axis);
  if (begin >= end || end > s.len)
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of range for axis of length " + std::to_string(s.len));
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * s.inner;
  const std::size_t start = begin * s.inner;
  std::vector<double> out(s.outer * chunk);
  const auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(d.data() + o * s.len * s.inner + start, chunk, out.data() + o * chunk);
  return make_result(std::move(out_shape), std::move(out), OpKind::kSlice, {a.impl()},
                     [s, chunk, start](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t oi = 0; oi < s.outer; ++oi)
                         for (std::size_t i = 0; i < chunk; ++i)
                           g[oi * s.len * s.inner + start + i] += o.grad[oi * chunk + i];
                     });
}

std::vector<Tensor> split(const Tensor& a, std::size_t axis, const std::vector<std::size_t>& sizes) {
  const auto s = split_at(a.shape(), axis);
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != s.len)
    throw DimensionError("split sizes do not sum to the axis length");
  std::vector<Tensor> out;
  std::size_t begin = 0;
  for (auto sz : sizes) {
    out.push_back(slice(a, axis, begin, begin + sz));
    begin += sz;
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "affine weight");
  require_rank(bias, 1, "affine bias");
  if (x.rank() == 0) throw DimensionError("affine on a rank-0 input");
  const std::size_t k = weight.dim(0), n = weight.dim(1);
  if (x.shape().back() != k)
    throw DimensionError("affine: input " + to_string(x.shape()) + " vs weight " +
                         to_string(weight.shape()));
  if (bias.dim(0) != n)
    throw DimensionError("affine: bias " + to_string(bias.shape()) + " vs weight " +
                         to_string(weight.shape()));
  const std::size_t rows = x.numel() / k;
  std::vector<double> out(rows * n);
  kernels::gemm_nn(x.data(), weight.data(), out, rows, k, n);
  const auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += b[j];
  Shape out_shape = x.shape();
  out_shape.back() = n;
  return make_result(std::move(out_shape), std::move(out), OpKind::kAffine,
                     {x.impl(), weight.impl(), bias.impl()},
                     [rows, k, n](const TensorImpl& o, std::span<const ImplPtr> in) {
                       if (wants_grad(in[0]))
                         kernels::gemm_nt(o.grad, in[1]->data, in[0]->grad_buffer(), rows, n, k,
                                          kernels::Accumulate::kYes);
                       if (wants_grad(in[1]))
                         kernels::gemm_tn(in[0]->data, o.grad, in[1]->grad_buffer(), rows, k, n,
                                          kernels::Accumulate::kYes);
                       if (wants_grad(in[2])) {
                         auto& g = in[2]->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
                       }
                     });
}

Tensor scale_lastdim(const Tensor& a, std::span<const double> weights) {
  if (a.rank() == 0 || a.shape().back() != weights.size())
    throw DimensionError("scale_lastdim: " + std::to_string(weights.size()) +
                         " weights for shape " + to_string(a.shape()));
  const std::size_t n = weights.size();
  auto w = std::make_shared<std::vector<double>>(weights.begin(), weights.end());
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*w)[i % n];
  return make_result(a.shape(), std::move(out), OpKind::kScaleLastDim, {a.impl()},
                     [w, n](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (*w)[i % n];
                     });
}

Tensor repeat(const Tensor& a, std::size_t axis, std::size_t times) {
  const auto s = split_at(a.shape(), axis);
  if (s.len != 1)
    throw DimensionError("repeat: axis " + std::to_string(axis) + " of " + to_string(a.shape()) +
                         " is not of size 1");
  if (times == 0) throw DimensionError("repeat: zero copies");
  Shape out_shape = a.shape();
  out_shape[axis] = times;
  std::vector<double> out(s.outer * times * s.inner);
  const auto d = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(d.data() + o * s.inner, s.inner, out.data() + (o * times + t) * s.inner);
  return make_result(std::move(out_shape), std::move(out), OpKind::kRepeat, {a.impl()},
                     [s, times](const TensorImpl& o, std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       for (std::size_t oi = 0; oi < s.outer; ++oi)
                         for (std::size_t t = 0; t < times; ++t)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             g[oi * s.inner + i] += o.grad[(oi * times + t) * s.inner + i];
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "cross_entropy logits");
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != rows)
    throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0," +
                          std::to_string(classes) + ")");
  auto probs = std::make_shared<std::vector<double>>(logits.data().begin(), logits.data().end());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = probs->data() + r * classes;
    const double peak = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - peak);
    const double log_z = peak + std::log(z);
    total += log_z - row[labels[r]];
    for (std::size_t j = 0; j < classes; ++j) row[j] = std::exp(row[j] - log_z);
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  auto targets = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  return make_result(Shape{}, {total * inv_rows}, OpKind::kCrossEntropy, {logits.impl()},
                     [probs, targets, rows, classes, inv_rows](const TensorImpl& o,
                                                               std::span<const ImplPtr> in) {
                       auto& g = in[0]->grad_buffer();
                       const double scale = o.grad[0] * inv_rows;
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < classes; ++j) {
                           const double target =
                               static_cast<std::size_t>((*targets)[r]) == j ? 1.0 : 0.0;
                           g[r * classes + j] += scale * ((*probs)[r * classes + j] - target);
                         }
                     });
}

}  // namespace fmv2
