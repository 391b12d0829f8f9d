// Width-generic kernel bodies. Included inside an anonymous namespace by each
// ISA translation unit after it defines its vector traits, so every
// instantiation stays local to the unit compiled with the matching flags.
//
// Traits V provide: scalar, reg, width, zero(), set1(s), load(p), store(p, r),
// add(a, b), mul(a, b), sub(a, b), max0(r), gt0_select(x, y).

template <class V, std::size_t R>
inline void gemm_rows(std::size_t n, std::size_t k, const typename V::scalar* a, std::size_t lda,
                      const typename V::scalar* b, std::size_t ldb, typename V::scalar* c,
                      std::size_t ldc, bool accumulate) {
  using T = typename V::scalar;
  using Reg = typename V::reg;
  constexpr std::size_t W = V::width;

  std::size_t j = 0;
  for (; j + 2 * W <= n; j += 2 * W) {
    Reg acc0[R];
    Reg acc1[R];
    for (std::size_t r = 0; r < R; ++r) {
      acc0[r] = accumulate ? V::load(c + r * ldc + j) : V::zero();
      acc1[r] = accumulate ? V::load(c + r * ldc + j + W) : V::zero();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const Reg b0 = V::load(b + p * ldb + j);
      const Reg b1 = V::load(b + p * ldb + j + W);
      for (std::size_t r = 0; r < R; ++r) {
        const Reg av = V::set1(a[r * lda + p]);
        acc0[r] = V::add(acc0[r], V::mul(av, b0));
        acc1[r] = V::add(acc1[r], V::mul(av, b1));
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      V::store(c + r * ldc + j, acc0[r]);
      V::store(c + r * ldc + j + W, acc1[r]);
    }
  }
  for (; j + W <= n; j += W) {
    Reg acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = accumulate ? V::load(c + r * ldc + j) : V::zero();
    for (std::size_t p = 0; p < k; ++p) {
      const Reg bv = V::load(b + p * ldb + j);
      for (std::size_t r = 0; r < R; ++r) acc[r] = V::add(acc[r], V::mul(V::set1(a[r * lda + p]), bv));
    }
    for (std::size_t r = 0; r < R; ++r) V::store(c + r * ldc + j, acc[r]);
  }
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      T s = accumulate ? c[r * ldc + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) s = s + a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] = s;
    }
  }
}

template <class V>
void vgemm(std::size_t m, std::size_t n, std::size_t k, const typename V::scalar* a, std::size_t lda,
           const typename V::scalar* b, std::size_t ldb, typename V::scalar* c, std::size_t ldc,
           bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows<V, 4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
  for (; i < m; ++i) gemm_rows<V, 1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <class V>
void vaxpy(std::size_t n, typename V::scalar a, const typename V::scalar* x,
           typename V::scalar* y) {
  constexpr std::size_t W = V::width;
  const auto av = V::set1(a);
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::add(V::load(y + i), V::mul(av, V::load(x + i))));
  for (; i < n; ++i) y[i] = y[i] + a * x[i];
}

template <class V>
void vaffine(std::size_t n, typename V::scalar sub, typename V::scalar mul,
             typename V::scalar add, const typename V::scalar* x, typename V::scalar* y) {
  constexpr std::size_t W = V::width;
  const auto sv = V::set1(sub);
  const auto mv = V::set1(mul);
  const auto adv = V::set1(add);
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::add(V::mul(V::sub(V::load(x + i), sv), mv), adv));
  for (; i < n; ++i) y[i] = (x[i] - sub) * mul + add;
}

template <class V>
void vrelu(std::size_t n, const typename V::scalar* x, typename V::scalar* y) {
  using T = typename V::scalar;
  constexpr std::size_t W = V::width;
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::max0(V::load(x + i)));
  for (; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class V>
void vrelu_backward(std::size_t n, const typename V::scalar* x, const typename V::scalar* dy,
                    typename V::scalar* dx) {
  using T = typename V::scalar;
  constexpr std::size_t W = V::width;
  std::size_t i = 0;
  for (; i + W <= n; i += W) V::store(dx + i, V::gt0_select(V::load(x + i), V::load(dy + i)));
  for (; i < n; ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
}

template <class V>
constexpr seprep::kernels::KernelTable<typename V::scalar> make_table(seprep::kernels::Isa isa) {
  return {isa, &vgemm<V>, &vaxpy<V>, &vaffine<V>, &vrelu<V>, &vrelu_backward<V>};
}
