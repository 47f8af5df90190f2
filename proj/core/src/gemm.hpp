#pragma once

// Register-blocked GEMM used by the convolution kernels. Every C element is
// accumulated over k in ascending order regardless of blocking or threading,
// so results are bit-identical for any thread count.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <type_traits>
#include <vector>

#include "wfuse/parallel.hpp"

namespace wfuse::detail {

// 32-byte vector via the GCC/Clang vector extension; lowered to whatever the
// target offers (two SSE registers without AVX).
typedef float VecF __attribute__((vector_size(32)));
typedef double VecD __attribute__((vector_size(32)));

template <class T>
using Vec = std::conditional_t<std::is_same_v<T, float>, VecF, VecD>;

template <class T>
inline Vec<T> load_vec(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

template <class T, class V>
inline void store_vec(T* p, const V& v) {
  std::memcpy(p, &v, sizeof v);
}

// MR x (NV * lanes) tile of C kept in registers for the whole k loop.
template <class T, int MR, int NV>
inline void gemm_micro(std::int64_t K, const T* A, std::int64_t lda, const T* B, std::int64_t ldb,
                       T* C, std::int64_t ldc, bool accumulate) {
  constexpr int L = static_cast<int>(sizeof(Vec<T>) / sizeof(T));
  Vec<T> c[MR][NV];
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) c[r][v] = accumulate ? load_vec(C + r * ldc + v * L) : Vec<T>{};
  for (std::int64_t k = 0; k < K; ++k) {
    const T* b = B + k * ldb;
    Vec<T> bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = load_vec(b + v * L);
    for (int r = 0; r < MR; ++r) {
      const T a = A[r * lda + k];
      for (int v = 0; v < NV; ++v) c[r][v] += a * bv[v];
    }
  }
  for (int r = 0; r < MR; ++r)
    for (int v = 0; v < NV; ++v) store_vec(C + r * ldc + v * L, c[r][v]);
}

template <class T, int NV>
inline void gemm_rows(std::int64_t mr, std::int64_t K, const T* A, std::int64_t lda, const T* B,
                      std::int64_t ldb, T* C, std::int64_t ldc, bool accumulate) {
  switch (mr) {
    case 1: return gemm_micro<T, 1, NV>(K, A, lda, B, ldb, C, ldc, accumulate);
    case 2: return gemm_micro<T, 2, NV>(K, A, lda, B, ldb, C, ldc, accumulate);
    case 3: return gemm_micro<T, 3, NV>(K, A, lda, B, ldb, C, ldc, accumulate);
    case 4: return gemm_micro<T, 4, NV>(K, A, lda, B, ldb, C, ldc, accumulate);
    case 5: return gemm_micro<T, 5, NV>(K, A, lda, B, ldb, C, ldc, accumulate);
    default: return gemm_micro<T, 6, NV>(K, A, lda, B, ldb, C, ldc, accumulate);
  }
}

// C[M x N] (+)= A[M x K] * B[K x N], row-major with leading dimensions.
template <class T>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, std::int64_t lda,
             const T* B, std::int64_t ldb, T* C, std::int64_t ldc, bool accumulate) {
  constexpr int MR = 6;
  constexpr int NV = 2;
  constexpr int NR = NV * static_cast<int>(sizeof(Vec<T>) / sizeof(T));
  if (M <= 0 || N <= 0) return;
  if (K == 0) {
    if (!accumulate)
      for (std::int64_t m = 0; m < M; ++m) std::fill(C + m * ldc, C + m * ldc + N, T(0));
    return;
  }
  const std::int64_t n_full = N / NR * NR;
  const std::int64_t n_tail = N - n_full;
  const std::int64_t m_blocks = (M + MR - 1) / MR;
  parallel_for(static_cast<std::size_t>(m_blocks), 1, [&](std::size_t b0, std::size_t b1) {
    const std::int64_t m_begin = static_cast<std::int64_t>(b0) * MR;
    const std::int64_t m_end = std::min<std::int64_t>(M, static_cast<std::int64_t>(b1) * MR);
    for (std::int64_t n0 = 0; n0 < n_full; n0 += NR)
      for (std::int64_t m0 = m_begin; m0 < m_end; m0 += MR)
        gemm_rows<T, NV>(std::min<std::int64_t>(MR, m_end - m0), K, A + m0 * lda, lda, B + n0, ldb,
                         C + m0 * ldc + n0, ldc, accumulate);
    if (n_tail == 0) return;
    // right edge: zero-padded copy of the last columns of B, results staged in ct
    std::vector<T> bp(static_cast<std::size_t>(K * NR), T(0));
    for (std::int64_t k = 0; k < K; ++k)
      std::copy(B + k * ldb + n_full, B + k * ldb + N, bp.begin() + k * NR);
    T ct[MR * NR];
    for (std::int64_t m0 = m_begin; m0 < m_end; m0 += MR) {
      const std::int64_t mr = std::min<std::int64_t>(MR, m_end - m0);
      T* c = C + m0 * ldc + n_full;
      for (std::int64_t r = 0; r < mr; ++r)
        for (std::int64_t j = 0; j < NR; ++j) ct[r * NR + j] = accumulate && j < n_tail ? c[r * ldc + j] : T(0);
      gemm_rows<T, NV>(mr, K, A + m0 * lda, lda, bp.data(), NR, ct, NR, true);
      for (std::int64_t r = 0; r < mr; ++r) std::copy(ct + r * NR, ct + r * NR + n_tail, c + r * ldc);
    }
  });
}

}  // namespace wfuse::detail
