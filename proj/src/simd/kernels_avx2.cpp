// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma;
// nothing here may run before dispatch has confirmed CPU support.

#include <immintrin.h>

#include "rfe/simd/kernels.hpp"

namespace rfe::simd::avx2 {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

float dot(const float* x, const float* y, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  __m256 acc2 = _mm256_setzero_ps();
  __m256 acc3 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
    acc2 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 16), _mm256_loadu_ps(y + i + 16), acc2);
    acc3 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 24), _mm256_loadu_ps(y + i + 24), acc3);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  }
  float s = hsum(_mm256_add_ps(_mm256_add_ps(acc0, acc1), _mm256_add_ps(acc2, acc3)));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(std::size_t n, float a, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

// C += op(A) * B with op(A)(i, p) = Trans ? a[p*lda + i] : a[i*lda + p].
// Register block: 4 rows x 16 columns, streaming over p.
template <bool Trans>
void gemm_xn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  auto A = [&](std::size_t i, std::size_t p) { return Trans ? a[p * lda + i] : a[i * lda + p]; };
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    float* c0 = c + i * ldc;
    float* c1 = c0 + ldc;
    float* c2 = c1 + ldc;
    float* c3 = c2 + ldc;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 r00 = _mm256_loadu_ps(c0 + j), r01 = _mm256_loadu_ps(c0 + j + 8);
      __m256 r10 = _mm256_loadu_ps(c1 + j), r11 = _mm256_loadu_ps(c1 + j + 8);
      __m256 r20 = _mm256_loadu_ps(c2 + j), r21 = _mm256_loadu_ps(c2 + j + 8);
      __m256 r30 = _mm256_loadu_ps(c3 + j), r31 = _mm256_loadu_ps(c3 + j + 8);
      for (std::size_t p = 0; p < k; ++p) {
        const float* brow = b + p * ldb + j;
        const __m256 b0 = _mm256_loadu_ps(brow);
        const __m256 b1 = _mm256_loadu_ps(brow + 8);
        __m256 av = _mm256_set1_ps(A(i, p));
        r00 = _mm256_fmadd_ps(av, b0, r00);
        r01 = _mm256_fmadd_ps(av, b1, r01);
        av = _mm256_set1_ps(A(i + 1, p));
        r10 = _mm256_fmadd_ps(av, b0, r10);
        r11 = _mm256_fmadd_ps(av, b1, r11);
        av = _mm256_set1_ps(A(i + 2, p));
        r20 = _mm256_fmadd_ps(av, b0, r20);
        r21 = _mm256_fmadd_ps(av, b1, r21);
        av = _mm256_set1_ps(A(i + 3, p));
        r30 = _mm256_fmadd_ps(av, b0, r30);
        r31 = _mm256_fmadd_ps(av, b1, r31);
      }
      _mm256_storeu_ps(c0 + j, r00), _mm256_storeu_ps(c0 + j + 8, r01);
      _mm256_storeu_ps(c1 + j, r10), _mm256_storeu_ps(c1 + j + 8, r11);
      _mm256_storeu_ps(c2 + j, r20), _mm256_storeu_ps(c2 + j + 8, r21);
      _mm256_storeu_ps(c3 + j, r30), _mm256_storeu_ps(c3 + j + 8, r31);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 r0 = _mm256_loadu_ps(c0 + j), r1 = _mm256_loadu_ps(c1 + j);
      __m256 r2 = _mm256_loadu_ps(c2 + j), r3 = _mm256_loadu_ps(c3 + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256 bv = _mm256_loadu_ps(b + p * ldb + j);
        r0 = _mm256_fmadd_ps(_mm256_set1_ps(A(i, p)), bv, r0);
        r1 = _mm256_fmadd_ps(_mm256_set1_ps(A(i + 1, p)), bv, r1);
        r2 = _mm256_fmadd_ps(_mm256_set1_ps(A(i + 2, p)), bv, r2);
        r3 = _mm256_fmadd_ps(_mm256_set1_ps(A(i + 3, p)), bv, r3);
      }
      _mm256_storeu_ps(c0 + j, r0), _mm256_storeu_ps(c1 + j, r1);
      _mm256_storeu_ps(c2 + j, r2), _mm256_storeu_ps(c3 + j, r3);
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        float s = c[(i + r) * ldc + j];
        for (std::size_t p = 0; p < k; ++p) s += A(i + r, p) * b[p * ldb + j];
        c[(i + r) * ldc + j] = s;
      }
    }
  }
  for (; i < m; ++i) {
    float* crow = c + i * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 r = _mm256_loadu_ps(crow + j);
      for (std::size_t p = 0; p < k; ++p) {
        r = _mm256_fmadd_ps(_mm256_set1_ps(A(i, p)), _mm256_loadu_ps(b + p * ldb + j), r);
      }
      _mm256_storeu_ps(crow + j, r);
    }
    for (; j < n; ++j) {
      float s = crow[j];
      for (std::size_t p = 0; p < k; ++p) s += A(i, p) * b[p * ldb + j];
      crow[j] = s;
    }
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_xn<false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_xn<true>(m, n, k, a, lda, b, ldb, c, ldc);
}

// C[i][j] += dot(A row i, B row j). Block of 2 x 4 dot products sharing loads.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
             const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  const std::size_t kv = k - k % 8;
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const float* a0 = a + i * lda;
    const float* a1 = a0 + lda;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const float* b0 = b + j * ldb;
      const float* b1 = b0 + ldb;
      const float* b2 = b1 + ldb;
      const float* b3 = b2 + ldb;
      __m256 s00 = _mm256_setzero_ps(), s01 = _mm256_setzero_ps(), s02 = _mm256_setzero_ps(),
             s03 = _mm256_setzero_ps();
      __m256 s10 = _mm256_setzero_ps(), s11 = _mm256_setzero_ps(), s12 = _mm256_setzero_ps(),
             s13 = _mm256_setzero_ps();
      for (std::size_t p = 0; p < kv; p += 8) {
        const __m256 x0 = _mm256_loadu_ps(a0 + p);
        const __m256 x1 = _mm256_loadu_ps(a1 + p);
        __m256 y = _mm256_loadu_ps(b0 + p);
        s00 = _mm256_fmadd_ps(x0, y, s00);
        s10 = _mm256_fmadd_ps(x1, y, s10);
        y = _mm256_loadu_ps(b1 + p);
        s01 = _mm256_fmadd_ps(x0, y, s01);
        s11 = _mm256_fmadd_ps(x1, y, s11);
        y = _mm256_loadu_ps(b2 + p);
        s02 = _mm256_fmadd_ps(x0, y, s02);
        s12 = _mm256_fmadd_ps(x1, y, s12);
        y = _mm256_loadu_ps(b3 + p);
        s03 = _mm256_fmadd_ps(x0, y, s03);
        s13 = _mm256_fmadd_ps(x1, y, s13);
      }
      float r[2][4] = {{hsum(s00), hsum(s01), hsum(s02), hsum(s03)},
                       {hsum(s10), hsum(s11), hsum(s12), hsum(s13)}};
      for (std::size_t p = kv; p < k; ++p) {
        r[0][0] += a0[p] * b0[p], r[0][1] += a0[p] * b1[p], r[0][2] += a0[p] * b2[p], r[0][3] += a0[p] * b3[p];
        r[1][0] += a1[p] * b0[p], r[1][1] += a1[p] * b1[p], r[1][2] += a1[p] * b2[p], r[1][3] += a1[p] * b3[p];
      }
      for (std::size_t q = 0; q < 4; ++q) {
        c[i * ldc + j + q] += r[0][q];
        c[(i + 1) * ldc + j + q] += r[1][q];
      }
    }
    for (; j < n; ++j) {
      c[i * ldc + j] += dot(a0, b + j * ldb, k);
      c[(i + 1) * ldc + j] += dot(a1, b + j * ldb, k);
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] += dot(a + i * lda, b + j * ldb, k);
  }
}

}  // namespace

const KernelTable& table() {
  static const KernelTable t{"avx2", &dot, &axpy, &gemm_nn, &gemm_tn, &gemm_nt};
  return t;
}

}  // namespace rfe::simd::avx2
