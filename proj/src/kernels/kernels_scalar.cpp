// Scalar reference kernels. These define the result every SIMD variant must
// reproduce exactly.

#include <cstddef>

#include "kernels/tables.hpp"

namespace seprep::kernels {
namespace {

template <typename T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + av * brow[j];
    }
  }
}

template <typename T>
void axpy(std::size_t n, T a, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] + a * x[i];
}

template <typename T>
void affine(std::size_t n, T sub, T mul, T add, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - sub) * mul + add;
}

template <typename T>
void relu(std::size_t n, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(std::size_t n, const T* x, const T* dy, T* dx) {
  for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

}  // namespace

const KernelTable<float> kScalarF32{Isa::scalar, &gemm<float>, &axpy<float>, &affine<float>,
                                    &relu<float>, &relu_backward<float>};
const KernelTable<double> kScalarF64{Isa::scalar, &gemm<double>, &axpy<double>,
                                     &affine<double>, &relu<double>, &relu_backward<double>};

}  // namespace seprep::kernels
