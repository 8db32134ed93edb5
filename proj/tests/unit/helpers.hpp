#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "fmv2/grad_check.hpp"
#include "fmv2/ops.hpp"
#include "fmv2/rng.hpp"
#include "fmv2/tensor.hpp"

namespace fmv2::test {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                            bool tracked = false) {
  Xorshift64Star rng(seed);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(shape, std::move(v), tracked);
}

// Random values whose magnitude stays at least `gap` away from zero, so relu
// kinks are never straddled by a finite-difference step.
inline Tensor away_from_zero(const Shape& shape, std::uint64_t seed, double gap = 0.05) {
  Xorshift64Star rng(seed);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) {
    const double m = rng.uniform(gap, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor(shape, std::move(v), true);
}

// Central-difference check of d(sum(w ⊙ f(inputs)))/d(inputs) with a fixed
// random weighting w, so every output entry contributes.
inline GradCheckReport check_op(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> inputs, std::uint64_t seed = 99) {
  const Tensor probe = f(inputs);
  const Tensor w = random_tensor(probe.shape(), seed);
  return grad_check([&](const std::vector<Tensor>& in) { return sum(mul(f(in), w)); }, inputs);
}

}  // namespace fmv2::test
