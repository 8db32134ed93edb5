#pragma once

// Dense row-major GEMM kernels in two flavours: a serial reference and an
// OpenMP version that partitions output rows across threads. Both use the
// same per-element accumulation order, so their results are bitwise equal
// for any thread count.

#include <cstddef>
#include <span>

namespace fmv2::kernels {

enum class Accumulate { kNo, kYes };

namespace serial {

// c[m×n] (+)= a[m×k] · b[k×n]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc);
// c[k×n] (+)= a[m×k]ᵀ · b[m×n]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc);
// c[m×n] (+)= a[m×k] · b[n×k]ᵀ
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc);

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc);

}  // namespace parallel

// Work (m·k·n) above which the dispatchers below use the parallel kernels.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 18;

// Dispatch on problem size and the active OpenMP thread budget. Inside an
// enclosing parallel region the serial kernel is always used.
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc = Accumulate::kNo);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc = Accumulate::kNo);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc = Accumulate::kNo);

}  // namespace fmv2::kernels
