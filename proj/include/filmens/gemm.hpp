#pragma once

#include <algorithm>
#include <cstddef>

namespace filmens::detail {

// Small row-major GEMM kernels for the convolution lowering.  Both keep a
// register-resident accumulator tile and a fixed summation order, so results
// do not depend on worker count or vector width.

/// C[m x n] += A[m x k] * B[k x n].
template <typename S>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const S* __restrict a,
             const S* __restrict b, S* __restrict c) {
  constexpr std::size_t TM = 4;
  constexpr std::size_t TN = 32;
  std::size_t j0 = 0;
  for (; j0 + TN <= n; j0 += TN) {
    std::size_t i0 = 0;
    for (; i0 + TM <= m; i0 += TM) {
      S acc[TM][TN] = {};
      for (std::size_t l = 0; l < k; ++l) {
        const S* __restrict brow = b + l * n + j0;
        for (std::size_t r = 0; r < TM; ++r) {
          const S av = a[(i0 + r) * k + l];
          for (std::size_t cc = 0; cc < TN; ++cc) acc[r][cc] += av * brow[cc];
        }
      }
      for (std::size_t r = 0; r < TM; ++r) {
        S* __restrict crow = c + (i0 + r) * n + j0;
        for (std::size_t cc = 0; cc < TN; ++cc) crow[cc] += acc[r][cc];
      }
    }
    for (; i0 < m; ++i0) {
      S acc[TN] = {};
      for (std::size_t l = 0; l < k; ++l) {
        const S av = a[i0 * k + l];
        const S* __restrict brow = b + l * n + j0;
        for (std::size_t cc = 0; cc < TN; ++cc) acc[cc] += av * brow[cc];
      }
      S* __restrict crow = c + i0 * n + j0;
      for (std::size_t cc = 0; cc < TN; ++cc) crow[cc] += acc[cc];
    }
  }
  if (j0 < n) {
    const std::size_t rem = n - j0;
    for (std::size_t i = 0; i < m; ++i) {
      S* __restrict crow = c + i * n + j0;
      for (std::size_t l = 0; l < k; ++l) {
        const S av = a[i * k + l];
        const S* __restrict brow = b + l * n + j0;
        for (std::size_t cc = 0; cc < rem; ++cc) crow[cc] += av * brow[cc];
      }
    }
  }
}

/// Cache-blocked out-of-place transpose: dst[j][i] = src[i][j].
template <typename S>
void transpose_into(const S* __restrict src, std::size_t rows, std::size_t cols,
                    S* __restrict dst) {
  constexpr std::size_t TB = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += TB) {
    const std::size_t imax = std::min(rows, i0 + TB);
    for (std::size_t j0 = 0; j0 < cols; j0 += TB) {
      const std::size_t jmax = std::min(cols, j0 + TB);
      for (std::size_t i = i0; i < imax; ++i)
        for (std::size_t j = j0; j < jmax; ++j) dst[j * rows + i] = src[i * cols + j];
    }
  }
}

/// C[m x n] += A[m x k] * B[n x k]^T, i.e. C[i][j] += dot(A row i, B row j).
/// The dot runs over fixed 16-lane partial sums folded in lane order.
template <typename S>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const S* __restrict a,
             const S* __restrict b, S* __restrict c) {
  constexpr std::size_t L = 16;
  constexpr std::size_t TJ = 4;
  for (std::size_t i = 0; i < m; ++i) {
    const S* __restrict arow = a + i * k;
    std::size_t j0 = 0;
    for (; j0 + TJ <= n; j0 += TJ) {
      S lanes[TJ][L] = {};
      std::size_t l = 0;
      for (; l + L <= k; l += L) {
        for (std::size_t t = 0; t < TJ; ++t) {
          const S* __restrict brow = b + (j0 + t) * k + l;
          for (std::size_t q = 0; q < L; ++q) lanes[t][q] += arow[l + q] * brow[q];
        }
      }
      for (std::size_t t = 0; t < TJ; ++t) {
        S acc = S(0);
        for (std::size_t q = 0; q < L; ++q) acc += lanes[t][q];
        for (std::size_t r = l; r < k; ++r) acc += arow[r] * b[(j0 + t) * k + r];
        c[i * n + j0 + t] += acc;
      }
    }
    for (; j0 < n; ++j0) {
      const S* __restrict brow = b + j0 * k;
      S lanes[L] = {};
      std::size_t l = 0;
      for (; l + L <= k; l += L)
        for (std::size_t q = 0; q < L; ++q) lanes[q] += arow[l + q] * brow[l + q];
      S acc = S(0);
      for (std::size_t q = 0; q < L; ++q) acc += lanes[q];
      for (; l < k; ++l) acc += arow[l] * brow[l];
      c[i * n + j0] += acc;
    }
  }
}

}  // namespace filmens::detail
