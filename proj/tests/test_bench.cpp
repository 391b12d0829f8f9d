#include <gtest/gtest.h>

#include <cmath>

#include "json.hpp"
#include "seprep/bench.hpp"
#include "seprep/error.hpp"
#include "test_support.hpp"

using namespace seprep;
using namespace seprep::bench;

namespace {

// Operation count written out per unit from the counting rules: convolution
// 2*C2*H2*W2*C1*U*V, BN 2/elem, K-way merge (2K-1)/elem, bias 1/elem, ReLU
// 1/elem, pooling 1 per input element, heads 2*C*D each.
std::uint64_t flops_oracle(const ArchDesc& a, Form form, std::uint64_t k) {
  std::uint64_t c1 = a.in_channels, side = a.in_size, total = 0;
  for (std::size_t c2 : a.widths) {
    const std::uint64_t out = (side + 2 * a.padding - a.kernel) / a.stride + 1;
    const std::uint64_t elems = c2 * out * out;
    const std::uint64_t conv = 2 * elems * c1 * a.kernel * a.kernel;
    switch (form) {
      case Form::source: total += conv + 2 * elems; break;
      case Form::seprep: total += k * (conv + 2 * elems) + (2 * k - 1) * elems; break;
      case Form::fused: total += conv + elems; break;
    }
    total += elems;  // ReLU
    c1 = c2;
    side = out;
  }
  total += c1 * side * side;
  const std::uint64_t heads = (form == Form::source ? 1 : k) * 2 * a.classes * a.feature_dim();
  return total + heads;
}

std::vector<ModelBundle<float>> sources(std::size_t k, const ArchDesc& arch) {
  std::vector<ModelBundle<float>> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(testkit::random_source<float>(arch, 100 + i));
  return out;
}

data::LabeledSet labeled(std::size_t n, std::size_t classes, std::uint64_t seed) {
  data::LabeledSet s;
  s.images = Tensor<float>({n, 3, 16, 16}, 0.5f);
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) s.labels.push_back(static_cast<int>(rng.index(classes)));
  return s;
}

}  // namespace

TEST(HScore, TableAnchoredExamples) {
  EXPECT_NEAR(h_score(90.0, 75.0), 81.8, 0.05);
  EXPECT_NEAR(h_score(73.4, 75.4), 74.4, 0.05);
  EXPECT_EQ(h_score(80.0, 80.0), 80.0);
  EXPECT_EQ(h_score(0.0, 0.0), 0.0);
  EXPECT_EQ(h_score(100.0, 0.0), 0.0);
}

TEST(HScore, PropertiesAndDomain) {
  SplitMix64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double s = rng.uniform(0, 100), t = rng.uniform(0, 100);
    const double h = h_score(s, t);
    EXPECT_DOUBLE_EQ(h, h_score(t, s));
    EXPECT_LE(h, std::max(s, t) + 1e-12);
    EXPECT_GE(h, std::min(s, t) - 1e-12);
    EXPECT_LE(h, (s + t) / 2 + 1e-12);
  }
  EXPECT_THROW(h_score(-1, 50), std::invalid_argument);
  EXPECT_THROW(h_score(50, 100.5), std::invalid_argument);
  EXPECT_THROW(h_score(std::nan(""), 50), std::invalid_argument);
}

TEST(Flops, DefaultArchitectureValues) {
  const ArchDesc arch;
  const auto src = sources(3, arch);
  const auto seprep = assemble<float>(src);
  const auto fused = fuse_model(seprep);
  // Hand totals for 3->16->32->64 at 16x16 with stride 2: convolutions
  // 55296 + 147456 + 147456, 1792 activations, 256 pooled inputs.
  EXPECT_EQ(flops_count(fused).extractor, 354048u);
  EXPECT_EQ(flops_count(fused).heads, 3u * 1280u);
  EXPECT_EQ(flops_count(seprep).extractor, 1072384u);
  EXPECT_EQ(flops_count(src[0]).extractor, 355840u);
  for (Form f : {Form::source, Form::seprep, Form::fused}) {
    const auto& m = f == Form::source ? src[0] : (f == Form::seprep ? seprep : fused);
    EXPECT_EQ(flops_count(m).total, flops_oracle(arch, f, 3));
  }
}

TEST(Flops, OracleAcrossArchitecturesAndK) {
  for (const std::vector<std::size_t>& widths :
       {std::vector<std::size_t>{8}, std::vector<std::size_t>{8, 16}, std::vector<std::size_t>{4, 8, 16, 32}}) {
    ArchDesc arch;
    arch.widths = widths;
    for (std::size_t k : {1u, 2u, 5u}) {
      const auto m = assemble<float>(sources(k, arch));
      EXPECT_EQ(flops_count(m).total, flops_oracle(arch, Form::seprep, k));
      EXPECT_EQ(flops_count(fuse_model(m)).total, flops_oracle(arch, Form::fused, k));
    }
  }
}

TEST(Flops, RatioAndHeadOverheadPattern) {
  const ArchDesc arch;
  const auto seprep = assemble<float>(sources(3, arch));
  const auto fused = fuse_model(seprep);
  const double ratio = static_cast<double>(flops_count(seprep).extractor) / flops_count(fused).extractor;
  EXPECT_GE(ratio, 2.94);
  EXPECT_LE(ratio, 3.06);
  const auto single = fuse_model(sources(1, arch)[0]);
  const auto head = 2u * arch.classes * arch.feature_dim();
  EXPECT_EQ(flops_count(fused).total - flops_count(single).total, 2u * head);
}

TEST(Flops, DependsOnlyOnShapes) {
  const ArchDesc arch;
  auto a = assemble<float>(sources(2, arch));
  auto b = a;
  for (auto& u : b.units) {
    for (auto& p : std::get<SepUnit<float>>(u).pathways) p.kernels.fill(0.0f);
  }
  EXPECT_EQ(flops_count(a), flops_count(b));
  EXPECT_THROW(flops_count(a, Shape{1, 16, 16}), ShapeError);
  // Doubling the input side quadruples every spatial count.
  const auto big = flops_count(a, Shape{3, 32, 32});
  EXPECT_EQ(big.heads, flops_count(a).heads);
  EXPECT_GT(big.extractor, 3 * flops_count(a).extractor);
}

TEST(Accuracy, PerfectAndRandomClassifiers) {
  const std::size_t n = 10000;
  const auto set = labeled(n, 10, 3);
  Tensor<float> perfect({n, 10}, 0.0f);
  for (std::size_t i = 0; i < n; ++i) perfect.at(i, static_cast<std::size_t>(set.labels[i])) = 1.0f;
  EXPECT_EQ(accuracy(perfect, set.labels), 100.0);
  SplitMix64 rng(4);
  const auto noise = testkit::random_tensor<float>({n, 10}, rng);
  EXPECT_NEAR(accuracy(noise, set.labels), 10.0, 2.0);
  EXPECT_THROW(accuracy(perfect, std::span<const int>(set.labels).first(3)), ShapeError);
}

TEST(Accuracy, TiesResolveToLowestIndex) {
  const Tensor<float> s({2, 3}, std::vector<float>{1, 1, 0, 0, 0, 0});
  const int labels[] = {0, 0};
  EXPECT_EQ(accuracy(s, labels), 100.0);
}

TEST(Evaluate, ComputesMeansAndIsPure) {
  const auto a = labeled(50, 10, 5), b = labeled(50, 10, 6), t = labeled(40, 10, 7);
  // Always predicts class 0.
  const Predictor always0 = [](const Tensor<float>& images) {
    Tensor<float> out({images.dim(0), 10}, 0.0f);
    for (std::size_t i = 0; i < images.dim(0); ++i) out.at(i, 0) = 1.0f;
    return out;
  };
  auto frac0 = [](const data::LabeledSet& s) {
    double hits = 0;
    for (int l : s.labels) hits += l == 0;
    return 100.0 * hits / static_cast<double>(s.size());
  };
  const NamedSet srcs[] = {{"a", &a}, {"b", &b}};
  const Flops fl{10, 2, 12};
  const auto r1 = evaluate("m", always0, fl, srcs, {"t", &t});
  const auto r2 = evaluate("m", always0, fl, srcs, {"t", &t});
  EXPECT_DOUBLE_EQ(r1.source_mean, (frac0(a) + frac0(b)) / 2);
  EXPECT_DOUBLE_EQ(r1.target_acc, frac0(t));
  EXPECT_DOUBLE_EQ(r1.h, h_score(r1.source_mean, r1.target_acc));
  EXPECT_EQ(r1.fingerprint, r2.fingerprint);
  EXPECT_EQ(r1.fingerprint.size(), 16u);
  EXPECT_EQ(r1.to_json(false), r2.to_json(false));
  const auto j = nlohmann::json::parse(r1.to_json());
  EXPECT_EQ(j.at("method"), "m");
  EXPECT_TRUE(j.contains("flops"));
  const data::LabeledSet empty;
  EXPECT_THROW(evaluate("m", always0, fl, srcs, {"e", &empty}), PreconditionError);
}

TEST(Evaluate, CsvRowMatchesHeader) {
  EvalReport r;
  r.method = "x";
  r.sources = {{"a", 50}, {"b", 60}};
  r.target = "t";
  const auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(count(EvalReport::csv_header()), count(r.to_csv_row()));
}

TEST(Fingerprint, FnvReferenceValues) {
  // FNV-1a 64: offset basis for the empty string; "a" -> af63dc4c8601ec8c.
  EXPECT_EQ(fingerprint(""), "cbf29ce484222325");
  EXPECT_EQ(fingerprint("a"), "af63dc4c8601ec8c");
}

TEST(Config, JsonRoundTripAndRejection) {
  ExperimentConfig cfg;
  cfg.seed = 17;
  cfg.targets = {0, 2};
  cfg.adapt.epochs = 3;
  cfg.methods = {"seprep", "source-ens"};
  const auto back = ExperimentConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.fingerprint(), cfg.fingerprint());
  EXPECT_NE(ExperimentConfig{}.fingerprint(), cfg.fingerprint());

  EXPECT_THROW(ExperimentConfig::from_json(R"({"sed": 1})"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"methods": ["magic"]})"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"targets": [9]})"), std::invalid_argument);
  EXPECT_THROW(ExperimentConfig::from_json(R"({"pretrain_domains": ["identity"]})"), std::invalid_argument);
  const auto partial = ExperimentConfig::from_json(R"({"seed": 5})");
  EXPECT_EQ(partial.seed, 5u);
  EXPECT_EQ(partial.domains, ExperimentConfig{}.domains);
}

TEST(Experiment, TinyRunProducesEveryRow) {
  ExperimentConfig cfg;
  cfg.train_per_class = 6;
  cfg.test_per_class = 3;
  cfg.arch.widths = {4, 8};
  cfg.pretrain.epochs = 1;
  cfg.source.epochs = 1;
  cfg.adapt.epochs = 1;
  cfg.adapt.batch_size = 16;
  cfg.kd.epochs = 1;
  const auto pool = prepare_sources(cfg);
  ASSERT_EQ(pool.models.size(), 4u);
  const auto result = run_experiment(cfg, pool, 3);
  ASSERT_EQ(result.rows.size(), all_methods().size());
  for (const auto& m : all_methods()) ASSERT_NE(find_row(result, m), nullptr) << m;
  // Rows other than the target are the three source domains.
  for (const auto& row : result.rows) EXPECT_EQ(row.sources.size(), 3u);
  // Fused and unfused evaluations predict identically.
  EXPECT_EQ(find_row(result, "seprep")->target_acc, find_row(result, "seprep-unfused")->target_acc);
  EXPECT_FALSE(table_text(result).empty());
  const ExperimentResult all[] = {result};
  EXPECT_NO_THROW(nlohmann::json::parse(results_json(all, cfg)));
  // Header plus one line per row.
  const auto csv = results_csv(all);
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 1 + result.rows.size());
}
