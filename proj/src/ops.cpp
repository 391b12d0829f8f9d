#include "seprep/ops.hpp"

#include <algorithm>
#include <cmath>

#include "seprep/kernels.hpp"

namespace seprep::ops {

ConvGeometry conv_geometry(const Shape& input, const Shape& kernels, std::size_t stride,
                           std::size_t padding) {
  if (input.size() != 4 || kernels.size() != 4) {
    throw ShapeError("conv2d expects input [N,C,H,W] and kernels [C2,C1,U,V], got " + shape_str(input) +
                     " and " + shape_str(kernels));
  }
  if (input[1] != kernels[1]) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input) + ", kernels " + shape_str(kernels));
  }
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  ConvGeometry g{};
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_h = input[2];
  g.in_w = input[3];
  g.out_channels = kernels[0];
  g.kernel_h = kernels[2];
  g.kernel_w = kernels[3];
  g.stride = stride;
  g.padding = padding;
  const std::size_t ph = g.in_h + 2 * padding;
  const std::size_t pw = g.in_w + 2 * padding;
  if (ph < g.kernel_h || pw < g.kernel_w) throw ShapeError("conv2d kernel larger than padded input");
  g.out_h = (ph - g.kernel_h) / stride + 1;
  g.out_w = (pw - g.kernel_w) / stride + 1;
  return g;
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& input, const ConvGeometry& g) {
  const std::size_t cols = g.batch * g.out_plane();
  Tensor<T> col(Shape{g.patch(), cols});
  T* out = col.ptr();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t u = 0; u < g.kernel_h; ++u) {
      for (std::size_t v = 0; v < g.kernel_w; ++v) {
        T* row = out + ((c * g.kernel_h + u) * g.kernel_w + v) * cols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* plane = input.ptr() + (n * g.in_channels + c) * g.in_h * g.in_w;
          T* dst = row + n * g.out_plane();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + u) - pad;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + v) - pad;
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.in_h) &&
                                  ix < static_cast<std::ptrdiff_t>(g.in_w);
              dst[oy * g.out_w + ox] =
                  inside ? plane[static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)] : T(0);
            }
          }
        }
      }
    }
  }
  return col;
}

namespace {

// Accumulates a column-matrix gradient back into input layout.
template <typename T>
void col2im(const Tensor<T>& col, const ConvGeometry& g, Tensor<T>& dx) {
  const std::size_t cols = g.batch * g.out_plane();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t u = 0; u < g.kernel_h; ++u) {
      for (std::size_t v = 0; v < g.kernel_w; ++v) {
        const T* row = col.ptr() + ((c * g.kernel_h + u) * g.kernel_w + v) * cols;
        for (std::size_t n = 0; n < g.batch; ++n) {
          T* plane = dx.ptr() + (n * g.in_channels + c) * g.in_h * g.in_w;
          const T* src = row + n * g.out_plane();
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + u) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + v) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
              T& d = plane[static_cast<std::size_t>(iy) * g.in_w + static_cast<std::size_t>(ix)];
              d = d + src[oy * g.out_w + ox];
            }
          }
        }
      }
    }
  }
}

// [C2, N*P] <-> [N, C2, P]
template <typename T>
void channel_major_to_batch_major(const T* src, const ConvGeometry& g, T* dst) {
  const std::size_t plane = g.out_plane();
  const std::size_t cols = g.batch * plane;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t j = 0; j < g.out_channels; ++j) {
      std::copy_n(src + j * cols + n * plane, plane, dst + (n * g.out_channels + j) * plane);
    }
  }
}

template <typename T>
void batch_major_to_channel_major(const T* src, const ConvGeometry& g, T* dst) {
  const std::size_t plane = g.out_plane();
  const std::size_t cols = g.batch * plane;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t j = 0; j < g.out_channels; ++j) {
      std::copy_n(src + (n * g.out_channels + j) * plane, plane, dst + j * cols + n * plane);
    }
  }
}

template <typename T>
void require_nchw(const Tensor<T>& t, const char* op) {
  if (t.rank() != 4) throw ShapeError(std::string(op) + " expects [N,C,H,W], got " + shape_str(t.shape()));
}

template <typename T>
void require_channel_vec(const Tensor<T>& v, std::size_t channels, const char* op) {
  if (v.rank() != 1 || v.dim(0) != channels) {
    throw ShapeError(std::string(op) + " expects per-channel vector of length " + std::to_string(channels) +
                     ", got " + shape_str(v.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                 std::size_t padding) {
  const ConvGeometry g = conv_geometry(input.shape(), kernels.shape(), stride, padding);
  const Tensor<T> col = im2col(input, g);
  const std::size_t cols = g.batch * g.out_plane();
  Tensor<T> tmp(Shape{g.out_channels, cols});
  kernels::active<T>().gemm(g.out_channels, cols, g.patch(), kernels.ptr(), g.patch(), col.ptr(), cols,
                            tmp.ptr(), cols, false);
  Tensor<T> out(Shape{g.batch, g.out_channels, g.out_h, g.out_w});
  channel_major_to_batch_major(tmp.ptr(), g, out.ptr());
  check_finite(out, "conv2d");
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                             const Tensor<T>& grad_out, std::size_t stride, std::size_t padding,
                             bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input.shape(), kernels.shape(), stride, padding);
  if (grad_out.shape() != Shape{g.batch, g.out_channels, g.out_h, g.out_w}) {
    throw ShapeError("conv2d_backward gradient shape " + shape_str(grad_out.shape()));
  }
  const auto& k = kernels::active<T>();
  const std::size_t cols = g.batch * g.out_plane();
  const std::size_t patch = g.patch();

  Tensor<T> dy(Shape{g.out_channels, cols});
  batch_major_to_channel_major(grad_out.ptr(), g, dy.ptr());

  ConvGrads<T> grads;
  const Tensor<T> col = im2col(input, g);
  const Tensor<T> col_t = transpose2d(col);
  grads.kernels = Tensor<T>(kernels.shape());
  k.gemm(g.out_channels, patch, cols, dy.ptr(), cols, col_t.ptr(), patch, grads.kernels.ptr(), patch, false);

  if (need_input_grad) {
    const Tensor<T> w_t = transpose2d(kernels.reshaped(Shape{g.out_channels, patch}));
    Tensor<T> dcol(Shape{patch, cols});
    k.gemm(patch, cols, g.out_channels, w_t.ptr(), g.out_channels, dy.ptr(), cols, dcol.ptr(), cols, false);
    grads.input = Tensor<T>(input.shape());
    col2im(dcol, g, grads.input);
  }
  return grads;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& mu, const Tensor<T>& sigma,
                      const Tensor<T>& gamma, const Tensor<T>& beta) {
  require_nchw(input, "batchnorm2d");
  const std::size_t channels = input.dim(1);
  require_channel_vec(mu, channels, "batchnorm2d mu");
  require_channel_vec(sigma, channels, "batchnorm2d sigma");
  require_channel_vec(gamma, channels, "batchnorm2d gamma");
  require_channel_vec(beta, channels, "batchnorm2d beta");
  for (std::size_t j = 0; j < channels; ++j) {
    if (!(sigma[j] > T(0))) throw PreconditionError("batchnorm2d requires sigma > 0");
  }
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto& k = kernels::active<T>();
  Tensor<T> out(input.shape());
  for (std::size_t n = 0; n < input.dim(0); ++n) {
    for (std::size_t j = 0; j < channels; ++j) {
      const std::size_t off = (n * channels + j) * plane;
      k.affine(plane, mu[j], gamma[j] / sigma[j], beta[j], input.ptr() + off, out.ptr() + off);
    }
  }
  check_finite(out, "batchnorm2d");
  return out;
}

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& input) {
  require_nchw(input, "channel_stats");
  const std::size_t channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  const std::size_t count = input.dim(0) * plane;
  ChannelStats<T> s{Tensor<T>(Shape{channels}), Tensor<T>(Shape{channels})};
  for (std::size_t j = 0; j < channels; ++j) {
    T sum = 0;
    for (std::size_t n = 0; n < input.dim(0); ++n) {
      const T* p = input.ptr() + (n * channels + j) * plane;
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const T mean = sum / static_cast<T>(count);
    T sq = 0;
    for (std::size_t n = 0; n < input.dim(0); ++n) {
      const T* p = input.ptr() + (n * channels + j) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = p[i] - mean;
        sq += d * d;
      }
    }
    s.mean[j] = mean;
    s.var[j] = sq / static_cast<T>(count);
  }
  return s;
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& input, const Tensor<T>& bias) {
  require_nchw(input, "add_channel_bias");
  const std::size_t channels = input.dim(1);
  require_channel_vec(bias, channels, "add_channel_bias");
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto& k = kernels::active<T>();
  Tensor<T> out(input.shape());
  for (std::size_t n = 0; n < input.dim(0); ++n) {
    for (std::size_t j = 0; j < channels; ++j) {
      const std::size_t off = (n * channels + j) * plane;
      k.affine(plane, T(0), T(1), bias[j], input.ptr() + off, out.ptr() + off);
    }
  }
  check_finite(out, "add_channel_bias");
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  kernels::active<T>().relu(input.size(), input.ptr(), out.ptr());
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  if (input.shape() != grad_out.shape()) throw ShapeError("relu_backward shape mismatch");
  Tensor<T> out(input.shape());
  kernels::active<T>().relu_backward(input.size(), input.ptr(), grad_out.ptr(), out.ptr());
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  require_nchw(input, "global_avg_pool");
  const std::size_t n = input.dim(0);
  const std::size_t c = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  Tensor<T> out(Shape{n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    const T* p = input.ptr() + i * plane;
    T sum = 0;
    for (std::size_t q = 0; q < plane; ++q) sum += p[q];
    out[i] = sum / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& m) {
  if (m.rank() != 2) throw ShapeError("transpose2d expects a matrix, got " + shape_str(m.shape()));
  const std::size_t r = m.dim(0);
  const std::size_t c = m.dim(1);
  Tensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = m[i * c + j];
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(1)) {
    throw ShapeError("linear shape mismatch: input " + shape_str(input.shape()) + ", weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t n = input.dim(0);
  const std::size_t d = input.dim(1);
  const std::size_t m = weight.dim(0);
  if (bias.rank() != 1 || bias.dim(0) != m) throw ShapeError("linear bias shape mismatch");
  const Tensor<T> w_t = transpose2d(weight);
  Tensor<T> out(Shape{n, m});
  kernels::active<T>().gemm(n, m, d, input.ptr(), d, w_t.ptr(), m, out.ptr(), m, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = out[i * m + j] + bias[j];
  }
  check_finite(out, "linear");
  return out;
}

template <typename T>
void axpy(T a, const Tensor<T>& x, Tensor<T>& y) {
  if (x.shape() != y.shape()) throw ShapeError("axpy shape mismatch");
  kernels::active<T>().axpy(x.size(), a, x.ptr(), y.ptr());
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("log_softmax expects [N,C], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.ptr() + i * c;
    const T mx = *std::max_element(z, z + c);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = z[j] - lse;
  }
  check_finite(out, "log_softmax");
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [N,C], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.ptr() + i * c;
    T* p = out.ptr() + i * c;
    const T mx = *std::max_element(z, z + c);
    T sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j < c; ++j) p[j] /= sum;
  }
  check_finite(out, "softmax");
  return out;
}

#define SEPREP_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> im2col(const Tensor<T>&, const ConvGeometry&);                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);         \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                        std::size_t, std::size_t, bool);                            \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                                 const Tensor<T>&, const Tensor<T>&);                               \
  template ChannelStats<T> channel_stats(const Tensor<T>&);                                         \
  template Tensor<T> add_channel_bias(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> relu(const Tensor<T>&);                                                        \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                             \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> transpose2d(const Tensor<T>&);                                                 \
  template void axpy(T, const Tensor<T>&, Tensor<T>&);                                              \
  template Tensor<T> log_softmax(const Tensor<T>&);                                                 \
  template Tensor<T> softmax(const Tensor<T>&);

SEPREP_INSTANTIATE_OPS(float)
SEPREP_INSTANTIATE_OPS(double)

}  // namespace seprep::ops
