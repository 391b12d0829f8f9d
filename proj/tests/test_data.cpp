#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "seprep/bench.hpp"
#include "seprep/data.hpp"
#include "seprep/nn.hpp"

using namespace seprep;
using namespace seprep::data;

namespace {

DomainSpec spec_of(std::string_view text, std::size_t per_class, std::uint64_t seed) {
  DomainSpec s = parse_domain(text);
  s.per_class = per_class;
  s.seed = seed;
  return s;
}

// Centers a vector and scales it to unit norm, so that the dot product of two
// such vectors is their Pearson correlation.
std::vector<double> standardized(std::vector<double> g) {
  double mean = 0;
  for (double v : g) mean += v / static_cast<double>(g.size());
  double norm = 0;
  for (double& v : g) {
    v -= mean;
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : g) v /= norm;
  return g;
}

std::vector<double> gray(const Tensor<float>& images, std::size_t i) {
  const std::size_t plane = kImageSize * kImageSize;
  std::vector<double> g(plane, 0.0);
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t p = 0; p < plane; ++p) g[p] += images[(i * kChannels + c) * plane + p] / 3.0;
  return standardized(g);
}

}  // namespace

TEST(Data, GenerationIsDeterministic) {
  const auto spec = spec_of("rotate:20", 5, 42);
  const auto a = gen_domain(spec, 10), b = gen_domain(spec, 10);
  EXPECT_TRUE(bit_identical(a.images, b.images));
  EXPECT_EQ(a.labels, b.labels);
  const auto c = gen_domain(spec_of("rotate:20", 5, 43), 10);
  EXPECT_FALSE(bit_identical(a.images, c.images));
}

TEST(Data, ValuesInRangeAndClassesBalanced) {
  for (const char* d : {"identity", "rotate:-30", "invert", "noise:0.5", "hue:90", "blur:2"}) {
    const auto set = gen_domain(spec_of(d, 7, 1), 10);
    ASSERT_EQ(set.images.shape(), (Shape{70, 3, 16, 16}));
    for (float v : set.images.data()) {
      ASSERT_GE(v, 0.0f) << d;
      ASSERT_LE(v, 1.0f) << d;
    }
    std::map<int, int> count;
    for (int l : set.labels) ++count[l];
    ASSERT_EQ(count.size(), 10u);
    for (const auto& [label, n] : count) EXPECT_EQ(n, 7) << d << " class " << label;
  }
}

TEST(Data, InvertIsOneMinusIdentity) {
  const auto id = gen_domain(spec_of("identity", 2, 9), 10);
  const auto inv = gen_domain(spec_of("invert", 2, 9), 10);
  for (std::size_t i = 0; i < id.images.size(); ++i) ASSERT_FLOAT_EQ(inv.images[i], 1.0f - id.images[i]);
}

TEST(Data, IdentityPrototypesAreRecoverable) {
  // Nearest-prototype classifier: each class prototype is the clean glyph at
  // every translation and a few scales of the jitter range; a probe takes the
  // class of its best-correlated prototype.
  struct Prototype {
    int label;
    std::vector<double> pixels;
  };
  std::vector<Prototype> protos;
  for (std::size_t c = 0; c < 10; ++c)
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx)
        for (double scale : {0.9, 0.95, 1.0, 1.05, 1.1}) {
          const auto g = render_glyph(c, dx, dy, scale);
          protos.push_back({static_cast<int>(c), standardized({g.data().begin(), g.data().end()})});
        }
  const auto probe = gen_domain(spec_of("identity", 50, 2), 10);
  std::size_t right = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const auto g = gray(probe.images, i);
    double best = -2;
    int pick = -1;
    for (const auto& p : protos) {
      double r = 0;
      for (std::size_t k = 0; k < g.size(); ++k) r += g[k] * p.pixels[k];
      if (r > best) {
        best = r;
        pick = p.label;
      }
    }
    right += pick == probe.labels[i];
  }
  EXPECT_GE(100.0 * static_cast<double>(right) / static_cast<double>(probe.size()), 99.0);
}

TEST(Data, RenderGlyphRejectsBadArguments) {
  EXPECT_THROW(render_glyph(10, 0, 0, 1.0), std::invalid_argument);
  EXPECT_THROW(render_glyph(0, 0, 0, 0.0), std::invalid_argument);
  const auto g = render_glyph(1, 0, 0, 1.0);
  EXPECT_EQ(g.shape(), (Shape{16, 16}));
}

TEST(Data, RotationOpensADomainGap) {
  DomainSpec id = spec_of("identity", 100, 3);
  const auto train = gen_domain(id, 10);
  const auto id_test = gen_domain(spec_of("identity", 50, 4), 10);
  const auto rot_test = gen_domain(spec_of("rotate:30", 50, 4), 10);
  TrainConfig cfg;
  cfg.epochs = 10;
  const auto m = train_source<float>(train, ArchDesc{}, cfg);
  const double in_domain = bench::accuracy(infer(m, id_test.images).logits[0], id_test.labels);
  const double shifted = bench::accuracy(infer(m, rot_test.images).logits[0], rot_test.labels);
  EXPECT_GE(in_domain - shifted, 15.0) << "identity " << in_domain << " rotate:30 " << shifted;
}

TEST(Data, ParseDomains) {
  EXPECT_EQ(parse_domain("noise:0.2").kind, TransformKind::noise);
  EXPECT_DOUBLE_EQ(parse_domain("rotate:-25").param, -25.0);
  EXPECT_EQ(parse_domain("noise:0.2").label(), "noise:0.2");
  EXPECT_EQ(parse_domain("identity").label(), "identity");
  const auto list = parse_domain_list("identity,rotate:25,invert,noise:0.2");
  ASSERT_EQ(list.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(list[i].label(), default_domains()[i].label());
  for (const char* bad : {"swirl", "rotate", "rotate:46", "noise:0.6", "noise:-0.1", "invert:1", "rotate:1x",
                          "identity,", "hue:181", "blur:4"}) {
    EXPECT_THROW(parse_domain_list(bad), std::invalid_argument) << bad;
  }
}

TEST(Data, InvalidClassCountRejected) {
  EXPECT_THROW(gen_domain(spec_of("identity", 1, 0), 0), std::invalid_argument);
  EXPECT_THROW(gen_domain(spec_of("identity", 1, 0), 11), std::invalid_argument);
}

TEST(Split, BalancedHalvesAreStratified) {
  const auto set = gen_domain(spec_of("identity", 10, 5), 10);
  const auto [a, b] = split(set, {0.5, 0.5}, 7);
  EXPECT_EQ(a.size(), 50u);
  EXPECT_EQ(b.size(), 50u);
  std::map<int, int> ca, cb;
  for (int l : a.labels) ++ca[l];
  for (int l : b.labels) ++cb[l];
  for (int c = 0; c < 10; ++c) {
    EXPECT_EQ(ca[c], 5);
    EXPECT_EQ(cb[c], 5);
  }
}

TEST(Split, DisjointAndDeterministic) {
  const auto set = gen_domain(spec_of("identity", 6, 6), 10);
  const auto [a1, b1] = split(set, {0.7, 0.3}, 3);
  const auto [a2, b2] = split(set, {0.7, 0.3}, 3);
  EXPECT_TRUE(bit_identical(a1.images, a2.images));
  EXPECT_EQ(b1.labels, b2.labels);
  // Every image appears exactly once across the two sides.
  const std::size_t per = 3 * 16 * 16;
  std::multiset<std::vector<float>> all, parts;
  auto rows = [&](const LabeledSet& s, std::multiset<std::vector<float>>& into) {
    for (std::size_t i = 0; i < s.size(); ++i)
      into.insert(std::vector<float>(s.images.ptr() + i * per, s.images.ptr() + (i + 1) * per));
  };
  rows(set, all);
  rows(a1, parts);
  rows(b1, parts);
  EXPECT_EQ(all, parts);
}

TEST(Split, RejectsEmptySideAndBadFractions) {
  const auto set = gen_domain(spec_of("identity", 4, 6), 10);
  EXPECT_THROW(split(set, {1.0, 0.0}, 1), std::invalid_argument);
  EXPECT_THROW(split(set, {0.6, 0.6}, 1), std::invalid_argument);
}

TEST(Benchmark, DomainsGetIndependentStreams) {
  const auto bm = gen_benchmark(default_domains(), 10, 4, 2, 0);
  ASSERT_EQ(bm.size(), 4u);
  for (const auto& d : bm) {
    EXPECT_EQ(d.train.size(), 40u);
    EXPECT_EQ(d.test.size(), 20u);
  }
  EXPECT_NE(bm[0].spec.seed, bm[1].spec.seed);
  const auto again = gen_benchmark(default_domains(), 10, 4, 2, 0);
  EXPECT_TRUE(bit_identical(bm[3].test.images, again[3].test.images));
}

TEST(Benchmark, ConcatAndSubset) {
  const auto a = gen_domain(spec_of("identity", 1, 1), 10);
  const auto b = gen_domain(spec_of("invert", 1, 1), 10);
  const LabeledSet parts[] = {a, b};
  const auto c = concat(parts);
  EXPECT_EQ(c.size(), 20u);
  const std::size_t idx[] = {10};
  const auto s = subset(c, idx);
  EXPECT_TRUE(bit_identical(s.images, b.images.slice0(0, 1)));
  EXPECT_EQ(s.labels[0], b.labels[0]);
}
