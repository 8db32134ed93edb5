#include <omp.h>

#include <vector>

#include "fmv2/kernels.hpp"
#include "gemm_rows.hpp"

namespace fmv2::kernels {

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  const bool add = acc == Accumulate::kYes;
  const auto tiles = static_cast<std::ptrdiff_t>(detail::tile_count(m));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tiles; ++t)
    detail::tile(a.data(), k, 1, b.data(), c.data(), static_cast<std::size_t>(t), m, k, n, add);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  const bool add = acc == Accumulate::kYes;
  const auto tiles = static_cast<std::ptrdiff_t>(detail::tile_count(k));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < tiles; ++t)
    detail::tile(a.data(), 1, k, b.data(), c.data(), static_cast<std::size_t>(t), k, m, n, add);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  std::vector<double> bt(k * n);
  detail::transpose(b.data(), bt.data(), n, k);
  parallel::gemm_nn(a, bt, c, m, k, n, acc);
}

}  // namespace parallel

namespace {

bool use_parallel(std::size_t m, std::size_t k, std::size_t n) {
  return m * k * n >= kParallelThreshold && !omp_in_parallel() && omp_get_max_threads() > 1;
}

}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  if (use_parallel(m, k, n))
    parallel::gemm_nn(a, b, c, m, k, n, acc);
  else
    serial::gemm_nn(a, b, c, m, k, n, acc);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  if (use_parallel(m, k, n))
    parallel::gemm_tn(a, b, c, m, k, n, acc);
  else
    serial::gemm_tn(a, b, c, m, k, n, acc);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  if (use_parallel(m, k, n))
    parallel::gemm_nt(a, b, c, m, k, n, acc);
  else
    serial::gemm_nt(a, b, c, m, k, n, acc);
}

}  // namespace fmv2::kernels
