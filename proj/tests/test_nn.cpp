#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "seprep/bench.hpp"
#include "seprep/ckpt.hpp"
#include "seprep/data.hpp"
#include "seprep/error.hpp"
#include "seprep/nn.hpp"
#include "test_support.hpp"

using namespace seprep;

namespace {

ArchDesc small_arch() {
  ArchDesc a;
  a.widths = {8, 16};
  return a;
}

data::LabeledSet toy_set(std::size_t per_class, std::uint64_t seed) {
  data::DomainSpec spec;
  spec.per_class = per_class;
  spec.seed = seed;
  return data::gen_domain(spec, 10);
}

// Linearly separable toy domain: every image of class c is one uniform color,
// the c-th of ten points on a circle in RGB space around mid gray, plus small
// pixel noise. Each class color is an extreme point of the set of colors, so
// a hyperplane separates it from all others.
data::LabeledSet separable_set(std::size_t per_class, std::uint64_t seed) {
  const std::size_t n = 10 * per_class;
  const std::size_t plane = data::kImageSize * data::kImageSize;
  data::LabeledSet s;
  s.images = Tensor<float>({n, 3, data::kImageSize, data::kImageSize});
  s.labels.resize(n);
  SplitMix64 rng(seed);
  // Orthonormal basis of the plane orthogonal to the gray axis.
  const double u[3] = {std::sqrt(2.0 / 3.0), -std::sqrt(1.0 / 6.0), -std::sqrt(1.0 / 6.0)};
  const double v[3] = {0.0, std::sqrt(0.5), -std::sqrt(0.5)};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 10);
    s.labels[i] = c;
    const double a = 2 * std::numbers::pi * c / 10;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double color = 0.5 + 0.35 * (std::cos(a) * u[ch] + std::sin(a) * v[ch]);
      for (std::size_t p = 0; p < plane; ++p) {
        s.images[(i * 3 + ch) * plane + p] = static_cast<float>(std::clamp(color + 0.02 * rng.normal(), 0.0, 1.0));
      }
    }
  }
  return s;
}

}  // namespace

TEST(Arch, ValidateRejectsBadDescriptors) {
  ArchDesc a;
  EXPECT_NO_THROW(a.validate());
  a.widths = {};
  EXPECT_THROW(a.validate(), ShapeError);
  a.widths = {4, 0};
  EXPECT_THROW(a.validate(), ShapeError);
}

TEST(Model, InitIsDeterministicAndValid) {
  const auto a = init_model<float>(ArchDesc{}, 7);
  const auto b = init_model<float>(ArchDesc{}, 7);
  const auto c = init_model<float>(ArchDesc{}, 8);
  EXPECT_NO_THROW(a.validate());
  EXPECT_TRUE(bit_identical(a, b));
  EXPECT_FALSE(bit_identical(a, c));
  EXPECT_EQ(a.form, Form::source);
  EXPECT_EQ(a.k(), 1u);
}

TEST(Model, ValidateCatchesShapeMismatch) {
  auto m = init_model<float>(ArchDesc{}, 1);
  m.heads[0].weight = Tensor<float>({10, 7});
  EXPECT_THROW(m.validate(), ShapeError);
  auto m2 = init_model<float>(ArchDesc{}, 1);
  m2.form = Form::seprep;
  EXPECT_THROW(m2.validate(), ShapeError);
}

TEST(Model, InferMatchesOpByOpOracle) {
  // Conv -> BN -> ReLU per unit, pooled, then the head, using the raw ops.
  const ArchDesc arch = small_arch();
  const auto m = testkit::random_source<double>(arch, 4);
  SplitMix64 rng(2);
  const auto x = testkit::random_tensor<double>(arch.input_shape(3), rng, 0, 1);
  Tensor<double> h = x;
  for (const auto& u : m.units) {
    const auto& p = std::get<ConvBNPathway<double>>(u);
    h = ops::relu(ops::batchnorm2d(ops::conv2d(h, p.kernels, p.stride, p.padding), p.run_mu, p.run_sigma, p.gamma,
                                   p.beta));
  }
  const auto feats = ops::global_avg_pool(h);
  const auto logits = ops::linear(feats, m.heads[0].weight, m.heads[0].bias);
  const auto got = infer(m, x);
  EXPECT_LE(max_abs_diff(got.features, feats), 1e-12);
  EXPECT_LE(max_abs_diff(got.logits[0], logits), 1e-12);
}

TEST(Model, InferChunkingDoesNotChangeResults) {
  const auto m = testkit::random_source<float>(ArchDesc{}, 5);
  SplitMix64 rng(3);
  const auto x = testkit::random_tensor<float>(ArchDesc{}.input_shape(7), rng, 0, 1);
  const auto a = infer(m, x, 256);
  const auto b = infer(m, x, 2);
  EXPECT_TRUE(bit_identical(a.logits[0], b.logits[0]));
}

TEST(Model, EvalGraphMatchesInferBitwise) {
  auto m = testkit::random_source<float>(ArchDesc{}, 6);
  SplitMix64 rng(4);
  const auto x = testkit::random_tensor<float>(ArchDesc{}.input_shape(4), rng, 0, 1);
  const auto g = forward_graph<float>(m, x, Mode::eval, nullptr);
  EXPECT_TRUE(bit_identical(g.logits[0].value(), infer(m, x).logits[0]));
}

TEST(Model, RejectsWrongInputShape) {
  const auto m = init_model<float>(ArchDesc{}, 1);
  EXPECT_THROW(infer(m, Tensor<float>({2, 3, 8, 8})), ShapeError);
}

TEST(Model, TrainModeUpdatesRunningStatistics) {
  auto m = init_model<double>(small_arch(), 2);
  SplitMix64 rng(5);
  const auto x = testkit::random_tensor<double>(small_arch().input_shape(6), rng, 0, 1);
  const auto before = std::get<ConvBNPathway<double>>(m.units[0]).run_mu;
  forward(m, x, Mode::train);
  const auto& p = std::get<ConvBNPathway<double>>(m.units[0]);
  // Oracle: mu <- 0.9 mu + 0.1 batch_mean with the batch mean of the conv output.
  const auto conv = ops::conv2d(x, p.kernels, p.stride, p.padding);
  const auto st = ops::channel_stats(conv);
  for (std::size_t j = 0; j < p.out_channels(); ++j) {
    EXPECT_NEAR(p.run_mu[j], 0.9 * before[j] + 0.1 * st.mean[j], 1e-12);
  }
}

TEST(Model, RunningVarianceUsesUnbiasedUpdate) {
  ConvBNPathway<double> p;
  p.kernels = Tensor<double>({1, 1, 1, 1}, 1.0);
  p.run_mu = Tensor<double>::vector({0.0});
  p.run_sigma = Tensor<double>::vector({1.0});
  p.gamma = Tensor<double>::vector({1.0});
  p.beta = Tensor<double>::vector({0.0});
  update_running_stats(p, Tensor<double>::vector({2.0}), Tensor<double>::vector({1.0}), 4, 0.5);
  EXPECT_DOUBLE_EQ(p.run_mu[0], 1.0);
  // Oracle: old var = sigma^2 - eps; blended with the n/(n-1)-corrected batch
  // variance 1 * 4/3; sigma = sqrt(var + eps).
  const double var = 0.5 * (1.0 - 1e-5) + 0.5 * (4.0 / 3.0);
  EXPECT_NEAR(p.run_sigma[0], std::sqrt(var + 1e-5), 1e-15);
}

TEST(Model, CosineLrSchedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0.1, 0, 10), 0.1);
  EXPECT_NEAR(cosine_lr(0.1, 5, 10), 0.05, 1e-15);
  EXPECT_NEAR(cosine_lr(0.1, 10, 10), 0.0, 1e-15);
}

TEST(Training, SeparableToyReachesHighTrainAccuracy) {
  const auto set = separable_set(20, 11);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 32;
  cfg.lr = 0.2;
  for (std::uint64_t init : {1, 2, 3}) {
    cfg.init_seed = init;
    const auto m = train_source<float>(set, small_arch(), cfg);
    const auto out = infer(m, set.images);
    EXPECT_GE(bench::accuracy(out.logits[0], set.labels), 99.0) << "init seed " << init;
  }
}

TEST(Training, ZeroEpochsLeavesModelUnchanged) {
  const auto set = toy_set(2, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto trained = train_source<float>(set, small_arch(), cfg);
  EXPECT_TRUE(bit_identical(trained, init_model<float>(small_arch(), cfg.init_seed)));
}

TEST(Training, SameSeedGivesBitIdenticalCheckpoints) {
  const auto set = toy_set(4, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  const auto a = train_source<float>(set, small_arch(), cfg);
  const auto b = train_source<float>(set, small_arch(), cfg);
  EXPECT_EQ(ckpt::encode_model(a), ckpt::encode_model(b));
  cfg.seed = 99;
  const auto c = train_source<float>(set, small_arch(), cfg);
  EXPECT_NE(ckpt::encode_model(a), ckpt::encode_model(c));
}

TEST(Training, EmptyDatasetIsRejected) {
  data::LabeledSet empty;
  EXPECT_THROW(train_source<float>(empty, small_arch(), TrainConfig{}), PreconditionError);
}

TEST(Training, SgdStepRequiresGradient) {
  auto m = init_model<double>(small_arch(), 3);
  ParamBinding<double> params;
  params.bind(m.heads[0].bias, true);
  EXPECT_THROW(params.sgd_step(0.1, 1.0), PreconditionError);
}

TEST(Training, SgdStepAppliesLearningRate) {
  Tensor<double> w = Tensor<double>::vector({1.0, 2.0});
  ParamBinding<double> params;
  auto v = params.bind(w, false);
  ag::sum(ag::mul(v, v)).backward();  // grad = 2w
  params.sgd_step(0.25, 1.0);
  EXPECT_DOUBLE_EQ(w[0], 0.5);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
}

TEST(Model, CastRoundTripPreservesFloatValues) {
  const auto m = testkit::random_source<float>(ArchDesc{}, 9);
  const auto back = model_cast<float>(model_cast<double>(m));
  EXPECT_TRUE(bit_identical(m, back));
}
