#pragma once

#include <cstddef>
#include <string_view>

#include "rfe/simd/reference.hpp"

namespace rfe::simd {

/// Single-precision inner-loop kernels. One table per instruction set;
/// the active table is chosen once at startup from CPU capabilities.
struct KernelTable {
  std::string_view name;
  float (*dot)(const float* x, const float* y, std::size_t n);
  void (*axpy)(std::size_t n, float a, const float* x, float* y);
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                  const float* b, std::size_t ldb, float* c, std::size_t ldc);
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                  const float* b, std::size_t ldb, float* c, std::size_t ldc);
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                  const float* b, std::size_t ldb, float* c, std::size_t ldc);
};

const KernelTable& scalar_kernels();

/// nullptr unless built with AVX2 support and the running CPU has AVX2+FMA.
const KernelTable* avx2_kernels();

/// Currently selected table. Defaults to the widest supported variant;
/// the environment variable RFE_KERNELS=scalar|avx2 overrides it.
const KernelTable& active();

/// Selects a table by name ("scalar", "avx2", "auto"). Returns false if
/// the requested variant is unavailable; the selection is then unchanged.
bool select(std::string_view name);

// Typed front ends: float goes through the dispatched table, double through
// the scalar reference.
inline float dot(const float* x, const float* y, std::size_t n) { return active().dot(x, y, n); }
inline double dot(const double* x, const double* y, std::size_t n) { return ref::dot(x, y, n); }

inline void axpy(std::size_t n, float a, const float* x, float* y) { active().axpy(n, a, x, y); }
inline void axpy(std::size_t n, double a, const double* x, double* y) { ref::axpy(n, a, x, y); }

#define RFE_SIMD_GEMM_FRONT(fn)                                                                   \
  inline void fn(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,    \
                 const float* b, std::size_t ldb, float* c, std::size_t ldc) {                    \
    active().fn(m, n, k, a, lda, b, ldb, c, ldc);                                                 \
  }                                                                                               \
  inline void fn(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,   \
                 const double* b, std::size_t ldb, double* c, std::size_t ldc) {                  \
    ref::fn(m, n, k, a, lda, b, ldb, c, ldc);                                                     \
  }
RFE_SIMD_GEMM_FRONT(gemm_nn)
RFE_SIMD_GEMM_FRONT(gemm_tn)
RFE_SIMD_GEMM_FRONT(gemm_nt)
#undef RFE_SIMD_GEMM_FRONT

}  // namespace rfe::simd
