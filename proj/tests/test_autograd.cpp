#include <gtest/gtest.h>

#include <cmath>

#include "seprep/autograd.hpp"
#include "seprep/error.hpp"
#include "seprep/ops.hpp"
#include "test_support.hpp"

using namespace seprep;
using ag::Var;
using V = Var<double>;

namespace {

constexpr double kTol = 1e-4;

// Reduces any output to a scalar through a fixed random projection so every
// output coordinate contributes to the checked gradient.
V project(const V& out, std::uint64_t seed) {
  SplitMix64 rng(seed);
  return ag::sum(ag::mul(out, V::constant(testkit::random_tensor<double>(out.value().shape(), rng))));
}

Tensor<double> rnd(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1) {
  SplitMix64 rng(seed);
  return testkit::random_tensor<double>(s, rng, lo, hi);
}

// Values bounded away from zero so ReLU kinks are never straddled.
Tensor<double> away_from_zero(const Shape& s, std::uint64_t seed) {
  auto t = rnd(s, seed, 0.1, 1.0);
  SplitMix64 rng(seed + 1);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (rng.uniform() < 0.5) t[i] = -t[i];
  }
  return t;
}

}  // namespace

TEST(Autograd, BackwardOfSumIsOnes) {
  V x = V::leaf(Tensor<double>({3}, 2.0));
  ag::sum(x).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 1.0);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  // d/dx (x*x) = 2x, with x used twice in one graph.
  V x = V::leaf(Tensor<double>::vector({3.0}));
  ag::sum(ag::mul(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 6.0);
}

TEST(Autograd, GradCheckRejectsBadStep) {
  EXPECT_THROW(ag::grad_check([](const V& x) { return ag::sum(x); }, Tensor<double>({2}, 1.0), 1.0),
               PreconditionError);
}

TEST(Autograd, Conv2dInputGradient) {
  const auto k = rnd({4, 3, 3, 3}, 2);
  const double err = ag::grad_check(
      [&](const V& x) { return project(ag::conv2d(x, V::constant(k), 2, 1), 3); }, rnd({2, 3, 6, 6}, 1));
  EXPECT_LE(err, kTol);
}

TEST(Autograd, Conv2dKernelGradient) {
  const auto x = rnd({2, 3, 5, 5}, 4);
  const double err = ag::grad_check(
      [&](const V& k) { return project(ag::conv2d(V::constant(x), k, 1, 1), 5); }, rnd({2, 3, 3, 3}, 6));
  EXPECT_LE(err, kTol);
}

TEST(Autograd, BatchNormEvalGradients) {
  const auto mu = rnd({3}, 7);
  const auto sigma = rnd({3}, 8, 0.5, 2.0);
  const auto gamma = rnd({3}, 9);
  const auto beta = rnd({3}, 10);
  const auto x = rnd({2, 3, 2, 2}, 11);
  EXPECT_LE(ag::grad_check(
                [&](const V& in) {
                  return project(ag::batchnorm_eval(in, mu, sigma, V::constant(gamma), V::constant(beta)), 12);
                },
                x),
            kTol);
  EXPECT_LE(ag::grad_check(
                [&](const V& g) {
                  return project(ag::batchnorm_eval(V::constant(x), mu, sigma, g, V::constant(beta)), 12);
                },
                gamma),
            kTol);
  EXPECT_LE(ag::grad_check(
                [&](const V& b) {
                  return project(ag::batchnorm_eval(V::constant(x), mu, sigma, V::constant(gamma), b), 12);
                },
                beta),
            kTol);
}

TEST(Autograd, BatchNormTrainGradients) {
  const auto gamma = rnd({3}, 13, 0.5, 1.5);
  const auto beta = rnd({3}, 14);
  const auto x = rnd({3, 3, 2, 2}, 15);
  EXPECT_LE(ag::grad_check(
                [&](const V& in) {
                  return project(ag::batchnorm_train(in, V::constant(gamma), V::constant(beta)).out, 16);
                },
                x),
            kTol);
  EXPECT_LE(ag::grad_check(
                [&](const V& g) { return project(ag::batchnorm_train(V::constant(x), g, V::constant(beta)).out, 16); },
                gamma),
            kTol);
  EXPECT_LE(ag::grad_check(
                [&](const V& b) { return project(ag::batchnorm_train(V::constant(x), V::constant(gamma), b).out, 16); },
                beta),
            kTol);
}

TEST(Autograd, ChannelBiasGradients) {
  const auto x = rnd({2, 3, 2, 2}, 17);
  const auto b = rnd({3}, 18);
  EXPECT_LE(ag::grad_check([&](const V& in) { return project(ag::channel_bias(in, V::constant(b)), 19); }, x), kTol);
  EXPECT_LE(ag::grad_check([&](const V& bb) { return project(ag::channel_bias(V::constant(x), bb), 19); }, b), kTol);
}

TEST(Autograd, ReluGradient) {
  EXPECT_LE(ag::grad_check([](const V& in) { return project(ag::relu(in), 20); }, away_from_zero({2, 3, 2, 2}, 21)),
            kTol);
}

TEST(Autograd, GlobalAvgPoolGradient) {
  EXPECT_LE(ag::grad_check([](const V& in) { return project(ag::global_avg_pool(in), 22); }, rnd({2, 3, 3, 3}, 23)),
            kTol);
}

TEST(Autograd, LinearGradients) {
  const auto x = rnd({4, 5}, 24);
  const auto w = rnd({3, 5}, 25);
  const auto b = rnd({3}, 26);
  EXPECT_LE(ag::grad_check([&](const V& in) { return project(ag::linear(in, V::constant(w), V::constant(b)), 27); }, x),
            kTol);
  EXPECT_LE(ag::grad_check([&](const V& ww) { return project(ag::linear(V::constant(x), ww, V::constant(b)), 27); }, w),
            kTol);
  EXPECT_LE(ag::grad_check([&](const V& bb) { return project(ag::linear(V::constant(x), V::constant(w), bb), 27); }, b),
            kTol);
}

TEST(Autograd, LogSoftmaxGradient) {
  EXPECT_LE(ag::grad_check([](const V& z) { return project(ag::log_softmax(z), 28); }, rnd({3, 4}, 29, -3, 3)), kTol);
}

TEST(Autograd, ElementwiseGradients) {
  const auto other = rnd({2, 3}, 30);
  EXPECT_LE(ag::grad_check([&](const V& a) { return project(ag::add(a, V::constant(other)), 31); }, rnd({2, 3}, 32)),
            kTol);
  EXPECT_LE(ag::grad_check([&](const V& a) { return project(ag::mul(a, V::constant(other)), 31); }, rnd({2, 3}, 32)),
            kTol);
  EXPECT_LE(ag::grad_check([&](const V& a) { return project(ag::scale(a, 2.5), 31); }, rnd({2, 3}, 32)), kTol);
}

TEST(Autograd, WeightedSumGradient) {
  const double w[] = {0.2, 0.5, 0.3};
  const double err = ag::grad_check(
      [&](const V& a) {
        const V terms[] = {ag::sum(a), ag::sum(ag::mul(a, a)), ag::scale(ag::sum(a), -1.0)};
        return ag::weighted_sum<double>(terms, w);
      },
      rnd({4}, 33));
  EXPECT_LE(err, kTol);
}

TEST(Autograd, CrossEntropyGradient) {
  const int labels[] = {0, 3, 2};
  for (double smoothing : {0.0, 0.1}) {
    EXPECT_LE(ag::grad_check([&](const V& z) { return ag::cross_entropy<double>(z, labels, smoothing); },
                             rnd({3, 4}, 34, -2, 2)),
              kTol);
  }
}

TEST(Autograd, CrossEntropyValueOracle) {
  // Uniform logits over C classes: loss = ln C for any label and smoothing.
  const int labels[] = {1, 0};
  const V z = V::constant(Tensor<double>({2, 5}, 0.3));
  EXPECT_NEAR(ag::cross_entropy<double>(z, labels, 0.1).value()[0], std::log(5.0), 1e-12);
  const int bad[] = {5, 0};
  EXPECT_ANY_THROW(ag::cross_entropy<double>(z, bad));
}

TEST(Autograd, ImLossGradient) {
  for (double w : {0.0, 1.0, 0.5}) {
    EXPECT_LE(ag::grad_check([&](const V& z) { return ag::im_loss<double>(z, w); }, rnd({4, 3}, 35, -2, 2)), kTol);
  }
}

TEST(Autograd, KdLossGradient) {
  auto teacher = ops::softmax(rnd({3, 4}, 36, -2, 2));
  for (double t : {1.0, 2.0, 4.0}) {
    EXPECT_LE(ag::grad_check([&](const V& z) { return ag::kd_loss<double>(z, teacher, t); }, rnd({3, 4}, 37, -2, 2)),
              kTol);
  }
}

TEST(Autograd, KdLossZeroWhenStudentMatchesTeacher) {
  const auto z = rnd({2, 4}, 38, -2, 2);
  Tensor<double> zt(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) zt[i] = z[i] / 2.0;
  const double loss = ag::kd_loss<double>(V::constant(z), ops::softmax(zt), 2.0).value()[0];
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(Autograd, WholeModelGradientThroughTrainGraph) {
  // End-to-end: the first conv kernel of a small model under train-mode BN,
  // the cross-entropy loss and the IM loss.
  ArchDesc arch;
  arch.widths = {3, 4};
  arch.in_size = 6;
  arch.classes = 3;
  auto model = init_model<double>(arch, 5);
  const auto x = rnd(arch.input_shape(4), 39, 0, 1);
  const int labels[] = {0, 1, 2, 1};
  auto& kernels = std::get<ConvBNPathway<double>>(model.units[0]).kernels;
  const double err = ag::grad_check(
      [&](const V& k) {
        auto copy = model;
        std::get<ConvBNPathway<double>>(copy.units[0]).kernels = k.value();
        // Rebuild the graph with `k` as the first kernel leaf.
        V h = ag::conv2d(V::constant(x), k, arch.stride, arch.padding);
        const auto& p0 = std::get<ConvBNPathway<double>>(copy.units[0]);
        h = ag::relu(ag::batchnorm_train(h, V::constant(p0.gamma), V::constant(p0.beta)).out);
        const auto& p1 = std::get<ConvBNPathway<double>>(copy.units[1]);
        h = ag::conv2d(h, V::constant(p1.kernels), arch.stride, arch.padding);
        h = ag::relu(ag::batchnorm_train(h, V::constant(p1.gamma), V::constant(p1.beta)).out);
        const V z = ag::linear(ag::global_avg_pool(h), V::constant(copy.heads[0].weight),
                               V::constant(copy.heads[0].bias));
        return ag::add(ag::cross_entropy<double>(z, labels, 0.1), ag::im_loss<double>(z));
      },
      kernels);
  EXPECT_LE(err, kTol);
}
