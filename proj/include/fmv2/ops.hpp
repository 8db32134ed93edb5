#pragma once

// Differentiable tensor operations. Every function here records exactly one
// graph node kind (see OpKind) when any input is tracked.

#include <cstddef>
#include <span>
#include <vector>

#include "fmv2/tensor.hpp"

namespace fmv2 {

// a[m×k] · b[k×n]
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose.
Tensor transpose(const Tensor& a);
// Same data, new shape of equal element count (copies).
Tensor reshape(const Tensor& a, Shape shape);
// out.shape[i] = a.shape[axes[i]].
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);

// Elementwise binary ops; `b` may be a one-element tensor broadcast over `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Softmax over the last axis, stabilised by subtracting the row maximum.
Tensor softmax_lastdim(const Tensor& a);

// Reductions drop `axis` from the shape. max routes the gradient to the
// first (lowest-index) maximiser.
Tensor mean(const Tensor& a, std::size_t axis);
Tensor max(const Tensor& a, std::size_t axis);
Tensor sum(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Splits `a` into consecutive pieces of the given sizes along `axis`.
std::vector<Tensor> split(const Tensor& a, std::size_t axis, const std::vector<std::size_t>& sizes);

// x[..., k] · W[k×n] + b[n], bias broadcast over all leading positions.
Tensor affine(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Multiplies every last-axis slice elementwise by a constant vector
// (diagonal scaling; untracked weights).
Tensor scale_lastdim(const Tensor& a, std::span<const double> weights);

// Expands a size-1 axis to `times` copies.
Tensor repeat(const Tensor& a, std::size_t axis, std::size_t times);

// (x − mean) / sqrt(var + eps) over the last axis, population variance.
Tensor standardize_lastdim(const Tensor& a, double eps = 1e-5);

// Mean over rows of −log softmax(logits)[label].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace fmv2
