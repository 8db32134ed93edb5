#pragma once

// Register-tiled GEMM bodies shared by the serial and parallel kernels.
//
// A tile covers up to kTileRows output rows. Element (r, p) of the left
// operand lives at a[r·row_stride + p·depth_stride], so one body serves both
// a·b and aᵀ·b. Every output element accumulates its k products in
// ascending order starting from 0 (or from c), so results depend only on
// the problem shape, never on how tiles are spread over threads.

#include <cstddef>

namespace fmv2::kernels::detail {

inline constexpr std::size_t kTileRows = 4;
inline constexpr std::size_t kTileCols = 16;

using Vec = double __attribute__((vector_size(64)));
inline constexpr std::size_t kLanes = sizeof(Vec) / sizeof(double);
static_assert(kTileCols == 2 * kLanes);

inline Vec load(const double* p) {
  Vec v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

inline void store(double* p, Vec v) { __builtin_memcpy(p, &v, sizeof v); }

template <std::size_t R>
inline void tile_rows(const double* __restrict a, std::size_t row_stride, std::size_t depth_stride,
                      const double* __restrict b, double* __restrict c, std::size_t k,
                      std::size_t n, bool acc) {
  std::size_t j0 = 0;
  for (; j0 + kTileCols <= n; j0 += kTileCols) {
    Vec lo[R], hi[R];
    for (std::size_t r = 0; r < R; ++r) {
      lo[r] = acc ? load(c + r * n + j0) : Vec{};
      hi[r] = acc ? load(c + r * n + j0 + kLanes) : Vec{};
    }
    for (std::size_t p = 0; p < k; ++p) {
      const Vec b0 = load(b + p * n + j0);
      const Vec b1 = load(b + p * n + j0 + kLanes);
      for (std::size_t r = 0; r < R; ++r) {
        const double av = a[r * row_stride + p * depth_stride];
        lo[r] += av * b0;
        hi[r] += av * b1;
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      store(c + r * n + j0, lo[r]);
      store(c + r * n + j0 + kLanes, hi[r]);
    }
  }
  const std::size_t rem = n - j0;
  if (rem == 0) return;
  // Column tail: pad into a zeroed strip so the same vector arithmetic runs.
  double bpad[kTileCols] = {};
  double cpad[kTileCols];
  Vec lo[R], hi[R];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t w = 0; w < kTileCols; ++w) cpad[w] = acc && w < rem ? c[r * n + j0 + w] : 0.0;
    lo[r] = load(cpad);
    hi[r] = load(cpad + kLanes);
  }
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t w = 0; w < rem; ++w) bpad[w] = b[p * n + j0 + w];
    const Vec b0 = load(bpad);
    const Vec b1 = load(bpad + kLanes);
    for (std::size_t r = 0; r < R; ++r) {
      const double av = a[r * row_stride + p * depth_stride];
      lo[r] += av * b0;
      hi[r] += av * b1;
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    store(cpad, lo[r]);
    store(cpad + kLanes, hi[r]);
    for (std::size_t w = 0; w < rem; ++w) c[r * n + j0 + w] = cpad[w];
  }
}

// Output rows [tile·kTileRows, min(m, (tile+1)·kTileRows)).
inline void tile(const double* a, std::size_t row_stride, std::size_t depth_stride,
                 const double* b, double* c, std::size_t tile_index, std::size_t m, std::size_t k,
                 std::size_t n, bool acc) {
  const std::size_t i0 = tile_index * kTileRows;
  const double* at = a + i0 * row_stride;
  double* ct = c + i0 * n;
  switch (m - i0 < kTileRows ? m - i0 : kTileRows) {
    case 4: tile_rows<4>(at, row_stride, depth_stride, b, ct, k, n, acc); break;
    case 3: tile_rows<3>(at, row_stride, depth_stride, b, ct, k, n, acc); break;
    case 2: tile_rows<2>(at, row_stride, depth_stride, b, ct, k, n, acc); break;
    default: tile_rows<1>(at, row_stride, depth_stride, b, ct, k, n, acc); break;
  }
}

inline std::size_t tile_count(std::size_t m) { return (m + kTileRows - 1) / kTileRows; }

inline void transpose(const double* __restrict src, double* __restrict dst, std::size_t rows,
                      std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace fmv2::kernels::detail
