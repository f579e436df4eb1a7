#include <atomic>
#include <cstdlib>
#include <string>

#include "rfe/simd/kernels.hpp"

#if defined(RFE_HAVE_AVX2)
namespace rfe::simd::avx2 {
const KernelTable& table();
}
#endif

namespace rfe::simd {
namespace {

bool cpu_has_avx2() {
#if defined(RFE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* widest() {
  if (const KernelTable* t = avx2_kernels()) return t;
  return &scalar_kernels();
}

const KernelTable* initial() {
  if (const char* env = std::getenv("RFE_KERNELS")) {
    std::string_view want(env);
    if (want == "scalar") return &scalar_kernels();
    if (want == "avx2" && avx2_kernels()) return avx2_kernels();
  }
  return widest();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{initial()};
  return ptr;
}

}  // namespace

const KernelTable* avx2_kernels() {
#if defined(RFE_HAVE_AVX2)
  static const bool ok = cpu_has_avx2();
  return ok ? &avx2::table() : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

bool select(std::string_view name) {
  const KernelTable* t = nullptr;
  if (name == "scalar") {
    t = &scalar_kernels();
  } else if (name == "avx2") {
    t = avx2_kernels();
  } else if (name == "auto") {
    t = widest();
  }
  if (t == nullptr) return false;
  current().store(t, std::memory_order_release);
  return true;
}

}  // namespace rfe::simd
