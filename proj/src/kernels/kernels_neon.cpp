// NEON kernels for AArch64, where Advanced SIMD (including f64 lanes) is baseline.

#include <arm_neon.h>

#include <cstddef>

#include "kernels/tables.hpp"

namespace {

struct NeonF32 {
  using scalar = float;
  using reg = float32x4_t;
  static constexpr std::size_t width = 4;
  static reg zero() { return vdupq_n_f32(0.0f); }
  static reg set1(float s) { return vdupq_n_f32(s); }
  static reg load(const float* p) { return vld1q_f32(p); }
  static void store(float* p, reg r) { vst1q_f32(p, r); }
  static reg add(reg a, reg b) { return vaddq_f32(a, b); }
  static reg sub(reg a, reg b) { return vsubq_f32(a, b); }
  static reg mul(reg a, reg b) { return vmulq_f32(a, b); }
  static reg max0(reg x) { return vbslq_f32(vcgtq_f32(x, zero()), x, zero()); }
  static reg gt0_select(reg x, reg y) { return vbslq_f32(vcgtq_f32(x, zero()), y, zero()); }
};

struct NeonF64 {
  using scalar = double;
  using reg = float64x2_t;
  static constexpr std::size_t width = 2;
  static reg zero() { return vdupq_n_f64(0.0); }
  static reg set1(double s) { return vdupq_n_f64(s); }
  static reg load(const double* p) { return vld1q_f64(p); }
  static void store(double* p, reg r) { vst1q_f64(p, r); }
  static reg add(reg a, reg b) { return vaddq_f64(a, b); }
  static reg sub(reg a, reg b) { return vsubq_f64(a, b); }
  static reg mul(reg a, reg b) { return vmulq_f64(a, b); }
  static reg max0(reg x) { return vbslq_f64(vcgtq_f64(x, zero()), x, zero()); }
  static reg gt0_select(reg x, reg y) { return vbslq_f64(vcgtq_f64(x, zero()), y, zero()); }
};

#include "kernels/vec_kernels.inl"

}  // namespace

namespace seprep::kernels {

const KernelTable<float> kNeonF32 = make_table<NeonF32>(Isa::neon);
const KernelTable<double> kNeonF64 = make_table<NeonF64>(Isa::neon);

}  // namespace seprep::kernels
