#pragma once

// Data-parallel inner loops behind the tensor ops. Every variant computes each
// output element with the same sequence of IEEE operations as the scalar
// reference (no FMA, no reassociation of reductions), so switching ISA never
// changes a result bit.

#include <cstddef>
#include <string_view>

namespace seprep::kernels {

enum class Isa { scalar, avx2, neon };

template <typename T>
struct KernelTable {
  Isa isa;

  // C[m,n] = (accumulate ? C : 0) + sum_p A[m,p] * B[p,n], p ascending.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

  // y += a * x
  void (*axpy)(std::size_t n, T a, const T* x, T* y);

  // y = (x - sub) * mul + add
  void (*affine)(std::size_t n, T sub, T mul, T add, const T* x, T* y);

  void (*relu)(std::size_t n, const T* x, T* y);

  // dx = x > 0 ? dy : 0
  void (*relu_backward)(std::size_t n, const T* x, const T* dy, T* dx);
};

bool isa_available(Isa isa) noexcept;
Isa best_isa() noexcept;

// Process-wide selection. Defaults to SEPREP_ISA={scalar,avx2,neon} when set,
// otherwise the best ISA the CPU supports.
Isa active_isa() noexcept;
void set_active_isa(Isa isa);

std::string_view isa_name(Isa isa) noexcept;
Isa parse_isa(std::string_view name);

template <typename T>
const KernelTable<T>& table(Isa isa);

template <typename T>
const KernelTable<T>& active() {
  return table<T>(active_isa());
}

}  // namespace seprep::kernels
