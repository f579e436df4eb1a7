#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "rfe/simd/kernels.hpp"

using namespace rfe::simd;

namespace {

std::vector<float> rand_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Direct triple loop in double; A is m x k (or k x m when ta), B is k x n (or n x k when tb).
std::vector<double> gemm_oracle(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k,
                                const std::vector<float>& a, std::size_t lda, const std::vector<float>& b,
                                std::size_t ldb, const std::vector<float>& c0, std::size_t ldc) {
  std::vector<double> c(c0.begin(), c0.end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta ? a[p * lda + i] : a[i * lda + p];
        const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
        s += av * bv;
      }
      c[i * ldc + j] += s;
    }
  return c;
}

void check_close(const std::vector<float>& got, const std::vector<double>& want, double k) {
  REQUIRE(got.size() == want.size());
  const double tol = 1e-5 * std::sqrt(static_cast<double>(k) + 1.0) * 4.0;
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= tol);
}

std::vector<const KernelTable*> tables() {
  std::vector<const KernelTable*> t{&scalar_kernels()};
  if (avx2_kernels()) t.push_back(avx2_kernels());
  return t;
}

}  // namespace

TEST_CASE("dot and axpy match the double oracle for every kernel table") {
  std::mt19937_64 rng(5);
  for (const auto* tab : tables()) {
    CAPTURE(tab->name);
    for (std::size_t n : {0, 1, 3, 7, 8, 9, 15, 16, 31, 32, 33, 100, 257}) {
      const auto x = rand_vec(n, rng), y = rand_vec(n, rng);
      double want = 0;
      for (std::size_t i = 0; i < n; ++i) want += static_cast<double>(x[i]) * y[i];
      CHECK(std::abs(tab->dot(x.data(), y.data(), n) - want) <= 1e-5 * (1 + std::sqrt(double(n))));

      auto z = y;
      tab->axpy(n, 0.75f, x.data(), z.data());
      for (std::size_t i = 0; i < n; ++i) CHECK(z[i] == doctest::Approx(y[i] + 0.75 * x[i]).epsilon(1e-6));
    }
  }
}

TEST_CASE("gemm variants match the double oracle on ragged shapes") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> dim(1, 37);
  for (const auto* tab : tables()) {
    CAPTURE(tab->name);
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t m = dim(rng), n = dim(rng), k = dim(rng);
      const std::size_t pad = trial % 3;
      CAPTURE(m);
      CAPTURE(n);
      CAPTURE(k);
      {
        const std::size_t lda = k + pad, ldb = n + pad, ldc = n + pad;
        const auto a = rand_vec(m * lda, rng), b = rand_vec(k * ldb, rng), c0 = rand_vec(m * ldc, rng);
        auto c = c0;
        tab->gemm_nn(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc);
        check_close(c, gemm_oracle(false, false, m, n, k, a, lda, b, ldb, c0, ldc), double(k));
      }
      {
        const std::size_t lda = m + pad, ldb = n + pad, ldc = n + pad;
        const auto a = rand_vec(k * lda, rng), b = rand_vec(k * ldb, rng), c0 = rand_vec(m * ldc, rng);
        auto c = c0;
        tab->gemm_tn(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc);
        check_close(c, gemm_oracle(true, false, m, n, k, a, lda, b, ldb, c0, ldc), double(k));
      }
      {
        const std::size_t lda = k + pad, ldb = k + pad, ldc = n + pad;
        const auto a = rand_vec(m * lda, rng), b = rand_vec(n * ldb, rng), c0 = rand_vec(m * ldc, rng);
        auto c = c0;
        tab->gemm_nt(m, n, k, a.data(), lda, b.data(), ldb, c.data(), ldc);
        check_close(c, gemm_oracle(false, true, m, n, k, a, lda, b, ldb, c0, ldc), double(k));
      }
    }
  }
}

TEST_CASE("AVX2 and scalar tables agree to rounding") {
  const KernelTable* avx = avx2_kernels();
  if (!avx) {
    MESSAGE("AVX2 kernels unavailable on this machine");
    return;
  }
  std::mt19937_64 rng(21);
  const std::size_t m = 24, n = 1024, k = 72;
  const auto a = rand_vec(m * k, rng), b = rand_vec(k * n, rng);
  std::vector<float> c1(m * n, 0.0f), c2(m * n, 0.0f);
  scalar_kernels().gemm_nn(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
  avx->gemm_nn(m, n, k, a.data(), k, b.data(), n, c2.data(), n);
  for (std::size_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-4).scale(1));
}

TEST_CASE("select switches the active table and rejects unknown names") {
  const auto before = active().name;
  CHECK(select("scalar"));
  CHECK(active().name == "scalar");
  CHECK_FALSE(select("neon-ultra"));
  CHECK(active().name == "scalar");
  CHECK(select("auto"));
  if (avx2_kernels()) {
    CHECK(active().name == "avx2");
  }
  CHECK(select(before));
}
