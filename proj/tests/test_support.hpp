#pragma once

// Test-only reference implementations. These are written directly from the
// defining formulas with plain nested loops and double accumulation, sharing
// no code with the library kernels they check.

#include <cmath>
#include <cstddef>
#include <vector>

#include "seprep/nn.hpp"
#include "seprep/rng.hpp"
#include "seprep/tensor.hpp"

namespace seprep::testkit {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Direct convolution: out[n,o,y,x] = sum_{c,u,v} in[n,c,y*s+u-p,x*s+v-p] * k[o,c,u,v].
inline std::vector<double> conv_oracle(const std::vector<double>& in, std::size_t n, std::size_t c1, std::size_t h,
                                       std::size_t w, const std::vector<double>& k, std::size_t c2, std::size_t kh,
                                       std::size_t kw, std::size_t stride, std::size_t pad, std::size_t& oh,
                                       std::size_t& ow) {
  oh = (h + 2 * pad - kh) / stride + 1;
  ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * c2 * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < c2; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = 0;
          for (std::size_t c = 0; c < c1; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long iy = static_cast<long>(y * stride + u) - static_cast<long>(pad);
                const long ix = static_cast<long>(x * stride + v) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += in[((b * c1 + c) * h + iy) * w + ix] * k[((o * c1 + c) * kh + u) * kw + v];
              }
          out[((b * c2 + o) * oh + y) * ow + x] = acc;
        }
  return out;
}

template <typename T>
std::vector<double> as_double(const Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

// Weighted sum over pathways of BN(conv(x)), evaluated pathway by pathway.
template <typename T>
std::vector<double> merge_oracle(const SepUnit<T>& unit, const Tensor<T>& x) {
  const std::size_t n = x.dim(0), c1 = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> total;
  for (std::size_t k = 0; k < unit.k(); ++k) {
    const auto& p = unit.pathways[k];
    std::size_t oh = 0, ow = 0;
    const auto conv = conv_oracle(as_double(x), n, c1, h, w, as_double(p.kernels), p.kernels.dim(0), p.kernels.dim(2),
                                  p.kernels.dim(3), p.stride, p.padding, oh, ow);
    if (total.empty()) total.assign(conv.size(), 0.0);
    const std::size_t c2 = p.kernels.dim(0), plane = oh * ow;
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t o = 0; o < c2; ++o)
        for (std::size_t q = 0; q < plane; ++q) {
          const std::size_t i = (b * c2 + o) * plane + q;
          const double bn = (conv[i] - p.run_mu[o]) / p.run_sigma[o] * p.gamma[o] + p.beta[o];
          total[i] += static_cast<double>(unit.merge_weights[k]) * bn;
        }
  }
  return total;
}

// Random pathway with BN statistics bounded away from degenerate values.
template <typename T>
ConvBNPathway<T> random_pathway(std::size_t c2, std::size_t c1, std::size_t ksize, std::size_t stride,
                                std::size_t pad, SplitMix64& rng) {
  ConvBNPathway<T> p;
  p.kernels = random_tensor<T>({c2, c1, ksize, ksize}, rng);
  p.run_mu = random_tensor<T>({c2}, rng, -0.5, 0.5);
  p.run_sigma = random_tensor<T>({c2}, rng, 0.5, 2.0);
  p.gamma = random_tensor<T>({c2}, rng, 0.5, 1.5);
  p.beta = random_tensor<T>({c2}, rng, -0.5, 0.5);
  p.stride = stride;
  p.padding = pad;
  return p;
}

template <typename T>
SepUnit<T> random_unit(std::size_t k, std::size_t c2, std::size_t c1, std::size_t ksize, std::size_t stride,
                       std::size_t pad, SplitMix64& rng) {
  SepUnit<T> u;
  for (std::size_t i = 0; i < k; ++i) u.pathways.push_back(random_pathway<T>(c2, c1, ksize, stride, pad, rng));
  u.merge_weights.assign(k, static_cast<T>(1.0 / static_cast<double>(k)));
  return u;
}

// Source model with randomized BN statistics (fresh initialization has
// mu=0, sigma=1, which would hide statistics bugs).
template <typename T>
ModelBundle<T> random_source(const ArchDesc& arch, std::uint64_t seed) {
  ModelBundle<T> m = init_model<T>(arch, seed);
  SplitMix64 rng(seed ^ 0xABCDEFULL);
  for (auto& u : m.units) {
    auto& p = std::get<ConvBNPathway<T>>(u);
    const std::size_t c2 = p.out_channels();
    p.run_mu = random_tensor<T>({c2}, rng, -0.3, 0.3);
    p.run_sigma = random_tensor<T>({c2}, rng, 0.5, 2.0);
    p.gamma = random_tensor<T>({c2}, rng, 0.5, 1.5);
    p.beta = random_tensor<T>({c2}, rng, -0.3, 0.3);
  }
  for (auto& h : m.heads) h.bias = random_tensor<T>({arch.classes}, rng, -0.2, 0.2);
  return m;
}

}  // namespace seprep::testkit
