#pragma once

// Dense row-major GEMM: an OpenMP-parallel kernel used by every matmul and
// convolution in the library, plus a naive serial reference kept for tests
// and benchmarks.

#include <algorithm>
#include <cstddef>
#include <vector>

namespace repro::kernels {

/// C (m x n) = op(A) (m x k) * op(B) (k x n), or C += ... when accumulate.
/// op(A) = A stored [m,k], or A stored [k,m] when trans_a. Same for B.
/// Every output row is produced by one thread in a fixed summation order, so
/// results do not depend on the thread count.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const T* a, const T* b, T* c, bool accumulate) {
  std::vector<T> bt;
  if (trans_b) {
    bt.resize(k * n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    b = bt.data();
  }
  constexpr std::size_t kBlock = 512;
  const auto rows = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
  for (long long ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
      const std::size_t j1 = std::min(n, j0 + kBlock);
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = trans_a ? a[p * m + i] : a[i * k + p];
        if (aip == T(0)) continue;
        const T* brow = b + p * n;
        for (std::size_t j = j0; j < j1; ++j) crow[j] += aip * brow[j];
      }
    }
  }
}

/// Serial triple loop with double accumulation.
template <typename T>
void gemm_reference(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
                    std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = accumulate ? static_cast<double>(c[i * n + j]) : 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = trans_a ? a[p * m + i] : a[i * k + p];
        const double bv = trans_b ? b[j * k + p] : b[p * n + j];
        s += av * bv;
      }
      c[i * n + j] = static_cast<T>(s);
    }
  }
}

}  // namespace repro::kernels
