#pragma once

// Graph-free tensor operations. The autograd layer and the eval-mode
// inference path both call these, so a forward pass computes identical bits
// whether or not a graph is being recorded.

#include <cstddef>

#include "seprep/tensor.hpp"

namespace seprep::ops {

// BN variance floor; sigma is sqrt(var + kBnEps) everywhere, including fusion.
inline constexpr double kBnEps = 1e-5;

struct ConvGeometry {
  std::size_t batch, in_channels, in_h, in_w;
  std::size_t out_channels, kernel_h, kernel_w;
  std::size_t stride, padding;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t out_plane() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernels, std::size_t stride,
                           std::size_t padding);

// Column matrix [C1*U*V, N*H2*W2]; row order is (input channel, kernel row,
// kernel col), which fixes the reduction order of the convolution.
template <typename T>
Tensor<T> im2col(const Tensor<T>& input, const ConvGeometry& g);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride,
                 std::size_t padding);

template <typename T>
struct ConvGrads {
  Tensor<T> input;    // empty when not requested
  Tensor<T> kernels;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels,
                             const Tensor<T>& grad_out, std::size_t stride, std::size_t padding,
                             bool need_input_grad);

// out[:,j] = (in[:,j] - mu[j]) * (gamma[j] / sigma[j]) + beta[j]
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& mu, const Tensor<T>& sigma,
                      const Tensor<T>& gamma, const Tensor<T>& beta);

template <typename T>
struct ChannelStats {
  Tensor<T> mean;
  Tensor<T> var;  // biased (population) variance
};

template <typename T>
ChannelStats<T> channel_stats(const Tensor<T>& input);

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& input, const Tensor<T>& bias);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

// [N,D] x [M,D]^T + [M] -> [N,M]
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& m);

// y += a * x
template <typename T>
void axpy(T a, const Tensor<T>& x, Tensor<T>& y);

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits);

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

}  // namespace seprep::ops
