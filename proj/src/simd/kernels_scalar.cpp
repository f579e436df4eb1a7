#include "rfe/simd/kernels.hpp"

namespace rfe::simd {

const KernelTable& scalar_kernels() {
  static const KernelTable table{
      "scalar",          &ref::dot<float>,     &ref::axpy<float>,
      &ref::gemm_nn<float>, &ref::gemm_tn<float>, &ref::gemm_nt<float>,
  };
  return table;
}

}  // namespace rfe::simd
