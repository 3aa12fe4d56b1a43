#pragma once

#include <cstdint>

// Row-major dense kernels. All accumulate into C, callers zero-fill first when
// they want a plain product. Inner loops are written so the compiler can
// vectorize; k is unrolled by 4 to amortize the C row traffic.

namespace meflow {

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const double* A, const double* B, double* C,
                    int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    int64_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = a[p], a1 = a[p + 1], a2 = a[p + 2], a3 = a[p + 3];
      const double* b0 = B + p * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (int64_t j = 0; j < n; ++j)
        c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const double a0 = a[p];
      const double* b0 = B + p * n;
      for (int64_t j = 0; j < n; ++j) c[j] += a0 * b0[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(const double* A, const double* B, double* C,
                    int64_t m, int64_t k, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    double* c = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      int64_t p = 0;
      for (; p + 4 <= k; p += 4) {
        s0 += a[p] * b[p];
        s1 += a[p + 1] * b[p + 1];
        s2 += a[p + 2] * b[p + 2];
        s3 += a[p + 3] * b[p + 3];
      }
      double s = (s0 + s1) + (s2 + s3);
      for (; p < k; ++p) s += a[p] * b[p];
      c[j] += s;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void gemm_tn(const double* A, const double* B, double* C,
                    int64_t m, int64_t k, int64_t n) {
  // Outer-product accumulation; sequential over k keeps it deterministic.
  for (int64_t p = 0; p < k; ++p) {
    const double* a = A + p * m;
    const double* b = B + p * n;
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
      const double ai = a[i];
      double* c = C + i * n;
      for (int64_t j = 0; j < n; ++j) c[j] += ai * b[j];
    }
  }
}

}  // namespace meflow
