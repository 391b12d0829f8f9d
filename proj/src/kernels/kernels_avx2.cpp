// AVX2 kernels. Compiled with -mavx2 only (no -mfma) and selected at runtime.

#include <immintrin.h>

#include <cstddef>

#include "kernels/tables.hpp"

namespace {

struct Avx2F32 {
  using scalar = float;
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg set1(float s) { return _mm256_set1_ps(s); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg r) { _mm256_storeu_ps(p, r); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_ps(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_ps(a, b); }
  // max returns the second operand on (+-0, +-0), giving +0 like the scalar path.
  static reg max0(reg x) { return _mm256_max_ps(x, _mm256_setzero_ps()); }
  static reg gt0_select(reg x, reg y) {
    return _mm256_and_ps(_mm256_cmp_ps(x, _mm256_setzero_ps(), _CMP_GT_OQ), y);
  }
};

struct Avx2F64 {
  using scalar = double;
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg set1(double s) { return _mm256_set1_pd(s); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg r) { _mm256_storeu_pd(p, r); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static reg sub(reg a, reg b) { return _mm256_sub_pd(a, b); }
  static reg mul(reg a, reg b) { return _mm256_mul_pd(a, b); }
  static reg max0(reg x) { return _mm256_max_pd(x, _mm256_setzero_pd()); }
  static reg gt0_select(reg x, reg y) {
    return _mm256_and_pd(_mm256_cmp_pd(x, _mm256_setzero_pd(), _CMP_GT_OQ), y);
  }
};

#include "kernels/vec_kernels.inl"

}  // namespace

namespace seprep::kernels {

const KernelTable<float> kAvx2F32 = make_table<Avx2F32>(Isa::avx2);
const KernelTable<double> kAvx2F64 = make_table<Avx2F64>(Isa::avx2);

}  // namespace seprep::kernels
