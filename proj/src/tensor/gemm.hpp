#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <thread>
#include <vector>

#include "cgmlp/tensor.hpp"

namespace cgmlp::detail {

// Splits [0, rows) into contiguous ranges, one per worker. Each output row is
// owned by exactly one worker, so results do not depend on the thread count.
template <typename F>
void parallel_rows(std::size_t rows, std::size_t work_per_row, F&& fn) {
  const std::size_t threads = static_cast<std::size_t>(num_threads());
  if (threads <= 1 || rows < 2 || rows * work_per_row < (1u << 16)) {
    fn(std::size_t{0}, rows);
    return;
  }
  const std::size_t workers = std::min(threads, rows);
  const std::size_t chunk = (rows + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(rows, begin + chunk);
    if (begin < end) pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(rows, chunk));
  for (auto& t : pool) t.join();
}

#if defined(__AVX512F__)
inline constexpr std::size_t kVecBytes = 64;
#elif defined(__AVX__)
inline constexpr std::size_t kVecBytes = 32;
#else
inline constexpr std::size_t kVecBytes = 16;
#endif

template <typename T>
struct VecOf {
  typedef T type __attribute__((vector_size(kVecBytes)));
};

template <typename T>
using Vec = typename VecOf<T>::type;

template <typename T>
inline Vec<T> load_vec(const T* p) {
  Vec<T> v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <typename T>
inline void store_vec(T* p, const Vec<T>& v) {
  std::memcpy(p, &v, sizeof(v));
}

inline constexpr std::size_t kTileRows = 4;
inline constexpr std::size_t kTileVecs = 2;

template <typename T>
inline constexpr std::size_t kTileCols = kTileVecs * kVecBytes / sizeof(T);

// C[4 x tile cols] (+)= A[4 x K] * B[K x tile cols] with the C tile held in
// registers.
template <typename T>
inline void gemm_tile(std::size_t k, const T* __restrict a, std::size_t ars,
                      std::size_t acs, const T* __restrict b, std::size_t ldb, T* __restrict c,
                      std::size_t ldc, bool accumulate) {
  constexpr std::size_t lanes = kVecBytes / sizeof(T);
  Vec<T> acc[kTileRows][kTileVecs];
  for (std::size_t r = 0; r < kTileRows; ++r)
    for (std::size_t v = 0; v < kTileVecs; ++v)
      acc[r][v] = accumulate ? load_vec<T>(c + r * ldc + v * lanes) : Vec<T>{};
  for (std::size_t p = 0; p < k; ++p) {
    const T* ap = a + p * acs;
    const T a0 = ap[0], a1 = ap[ars], a2 = ap[2 * ars], a3 = ap[3 * ars];
    const Vec<T> b0 = load_vec<T>(b + p * ldb);
    const Vec<T> b1 = load_vec<T>(b + p * ldb + lanes);
    acc[0][0] += a0 * b0;
    acc[0][1] += a0 * b1;
    acc[1][0] += a1 * b0;
    acc[1][1] += a1 * b1;
    acc[2][0] += a2 * b0;
    acc[2][1] += a2 * b1;
    acc[3][0] += a3 * b0;
    acc[3][1] += a3 * b1;
  }
  for (std::size_t r = 0; r < kTileRows; ++r)
    for (std::size_t v = 0; v < kTileVecs; ++v) store_vec<T>(c + r * ldc + v * lanes, acc[r][v]);
}

// Edge tile of arbitrary size, same summation order as gemm_tile.
template <typename T>
void gemm_edge(std::size_t rows, std::size_t cols, std::size_t k, const T* a, std::size_t ars,
               std::size_t acs, const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* crow = c + r * ldc;
    if (!accumulate) std::fill(crow, crow + cols, T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[r * ars + p * acs];
      const T* bp = b + p * ldb;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += av * bp[j];
    }
  }
}

// C[M x N] (+)= op(A)[M x K] * B[K x N], op(A)(i, p) = a[i * ars + p * acs]
template <typename T>
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
                  std::size_t ars, std::size_t acs, const T* __restrict b, T* __restrict c,
                  bool accumulate) {
  constexpr std::size_t kCols = kTileCols<T>;
  parallel_rows(m, n * k, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
      const std::size_t cols = std::min(kCols, n - j0);
      std::size_t i = r0;
      if (cols == kCols) {
        for (; i + kTileRows <= r1; i += kTileRows) {
          gemm_tile<T>(k, a + i * ars, ars, acs, b + j0, n, c + i * n + j0, n, accumulate);
        }
      }
      if (i < r1) {
        gemm_edge(r1 - i, cols, k, a + i * ars, ars, acs, b + j0, n, c + i * n + j0, n,
                  accumulate);
      }
    }
  });
}

// C[M x N] (+)= A[M x K] * B[K x N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
             const T* __restrict b, T* __restrict c, bool accumulate) {
  gemm_strided(m, n, k, a, k, 1, b, c, accumulate);
}

// dst[cols x rows] = src[rows x cols]^T
template <typename T>
void transpose_into(std::size_t rows, std::size_t cols, const T* __restrict src,
                    T* __restrict dst) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::size_t r1 = std::min(rows, r0 + kTile);
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = std::min(cols, c0 + kTile);
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
    }
  }
}

// C[M x N] (+)= A[M x K] * B[N x K]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
             const T* __restrict b, T* __restrict c, bool accumulate) {
  std::vector<T> bt(n * k);
  transpose_into(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

// C[M x N] (+)= A[K x M]^T * B[K x N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
             const T* __restrict b, T* __restrict c, bool accumulate) {
  gemm_strided(m, n, k, a, 1, m, b, c, accumulate);
}

}  // namespace cgmlp::detail
