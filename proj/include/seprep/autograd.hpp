#pragma once

// Minimal reverse-mode autodiff over whole-tensor operations. A graph is built
// implicitly as ops are applied to Var handles and released when the last
// handle goes away.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "seprep/ops.hpp"
#include "seprep/tensor.hpp"

namespace seprep::ag {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Var leaf(Tensor<T> value, bool requires_grad = true) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

  // Seeds d(self)/d(self) = 1; self must hold a single element.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, std::size_t stride, std::size_t padding);

// Eval-mode BN with fixed statistics.
template <typename T>
Var<T> batchnorm_eval(const Var<T>& input, const Tensor<T>& mu, const Tensor<T>& sigma,
                      const Var<T>& gamma, const Var<T>& beta);

template <typename T>
struct BatchNormTrain {
  Var<T> out;
  Tensor<T> mean;  // batch mean
  Tensor<T> var;   // biased batch variance
};

// Train-mode BN: normalizes with batch statistics, sigma = sqrt(var + eps).
template <typename T>
BatchNormTrain<T> batchnorm_train(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta);

template <typename T>
Var<T> channel_bias(const Var<T>& input, const Var<T>& bias);

template <typename T>
Var<T> relu(const Var<T>& input);

template <typename T>
Var<T> global_avg_pool(const Var<T>& input);

template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> log_softmax(const Var<T>& logits);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

template <typename T>
Var<T> sum(const Var<T>& a);

// sum_k weights[k] * terms[k], accumulated in k order.
template <typename T>
Var<T> weighted_sum(std::span<const Var<T>> terms, std::span<const T> weights);

// Mean over rows of -sum_c q_c log softmax(z)_c with q = (1-s) onehot + s/C.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels, T label_smoothing = T(0));

// Information-maximization objective: mean per-sample entropy minus
// diversity_weight * entropy of the mean prediction (nats).
template <typename T>
Var<T> im_loss(const Var<T>& logits, T diversity_weight = T(1));

// T^2 * mean_i KL(teacher_i || softmax(z_i / T)); teacher rows are already
// softened probabilities.
template <typename T>
Var<T> kd_loss(const Var<T>& student_logits, const Tensor<T>& teacher_probs, T temperature);

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |numeric| + 1e-12). 64-bit only.
double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                  double step = 1e-6);

}  // namespace seprep::ag
