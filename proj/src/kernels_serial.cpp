#include "fmv2/kernels.hpp"

#include <vector>

#include "gemm_rows.hpp"

namespace fmv2::kernels::serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  const bool add = acc == Accumulate::kYes;
  for (std::size_t t = 0; t < detail::tile_count(m); ++t)
    detail::tile(a.data(), k, 1, b.data(), c.data(), t, m, k, n, add);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  const bool add = acc == Accumulate::kYes;
  for (std::size_t t = 0; t < detail::tile_count(k); ++t)
    detail::tile(a.data(), 1, k, b.data(), c.data(), t, k, m, n, add);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, Accumulate acc) {
  std::vector<double> bt(k * n);
  detail::transpose(b.data(), bt.data(), n, k);
  serial::gemm_nn(a, bt, c, m, k, n, acc);
}

}  // namespace fmv2::kernels::serial
