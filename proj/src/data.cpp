#include "seprep/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

#include "seprep/error.hpp"
#include "seprep/rng.hpp"

namespace seprep::data {

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

// Stroke prototypes in glyph coordinates ([-1,1]^2, y pointing down). Shapes
// are chosen so that no two classes are rotations of each other by less than
// 45 degrees.
const std::vector<std::vector<Segment>>& prototypes() {
  static const std::vector<std::vector<Segment>> kGlyphs = [] {
    std::vector<std::vector<Segment>> g(kMaxClasses);
    g[0] = {{-0.9, 0.0, 0.9, 0.0}};                                            // horizontal bar
    g[1] = {{0.0, -0.9, 0.0, 0.9}};                                            // vertical bar
    g[2] = {{-0.8, 0.0, 0.8, 0.0}, {0.0, -0.8, 0.0, 0.8}};                     // plus
    g[3] = {{-0.7, -0.7, 0.7, -0.7}, {0.7, -0.7, 0.7, 0.7},                    // square
            {0.7, 0.7, -0.7, 0.7}, {-0.7, 0.7, -0.7, -0.7}};
    g[4] = {{0.0, -0.8, 0.8, 0.7}, {0.8, 0.7, -0.8, 0.7}, {-0.8, 0.7, 0.0, -0.8}};  // triangle
    g[5] = {{-0.6, -0.8, -0.6, 0.7}, {-0.6, 0.7, 0.7, 0.7}};                   // L
    g[6] = {{-0.8, -0.7, 0.8, -0.7}, {0.0, -0.7, 0.0, 0.8}};                   // T
    g[7] = {{-0.8, -0.8, 0.0, 0.8}, {0.0, 0.8, 0.8, -0.8}};                    // V
    g[8] = {{-0.7, -0.7, 0.7, -0.7}, {0.7, -0.7, -0.7, 0.7}, {-0.7, 0.7, 0.7, 0.7}};  // Z
    // Circle approximated by a 12-gon.
    for (int i = 0; i < 12; ++i) {
      const double a0 = 2 * std::numbers::pi * i / 12;
      const double a1 = 2 * std::numbers::pi * (i + 1) / 12;
      g[9].push_back({0.75 * std::cos(a0), 0.75 * std::sin(a0), 0.75 * std::cos(a1), 0.75 * std::sin(a1)});
    }
    return g;
  }();
  return kGlyphs;
}

constexpr double kGlyphScalePx = 6.0;   // glyph unit length in pixels
constexpr double kHalfWidthPx = 0.75;   // stroke half width in pixels
constexpr double kCenter = (kImageSize - 1) / 2.0;

double segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = px - (s.x0 + t * dx);
  const double ey = py - (s.y0 + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

struct Jitter {
  int tx = 0;
  int ty = 0;
  double scale = 1.0;
};

// Anti-aliased stroke coverage in [0,1] for each pixel, after jitter and an
// optional rotation about the image center.
std::array<double, kImageSize * kImageSize> render_mask(std::size_t cls, const Jitter& j, double rotate_deg) {
  const auto& segs = prototypes()[cls];
  const double a = rotate_deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a);
  const double sa = std::sin(a);
  const double unit = kGlyphScalePx * j.scale;
  std::array<double, kImageSize * kImageSize> mask{};
  for (std::size_t y = 0; y < kImageSize; ++y) {
    for (std::size_t x = 0; x < kImageSize; ++x) {
      // Inverse rotation maps the output pixel back into the jittered image.
      const double rx = static_cast<double>(x) - kCenter;
      const double ry = static_cast<double>(y) - kCenter;
      const double ux = ca * rx + sa * ry;
      const double uy = -sa * rx + ca * ry;
      // Undo translation and scale to reach glyph coordinates.
      const double gx = (ux - j.tx) / unit;
      const double gy = (uy - j.ty) / unit;
      double d = 1e9;
      for (const auto& s : segs) d = std::min(d, segment_distance(gx, gy, s));
      mask[y * kImageSize + x] = std::clamp(kHalfWidthPx + 0.5 - d * unit, 0.0, 1.0);
    }
  }
  return mask;
}

// Rotation of RGB about the gray axis by `deg` degrees.
std::array<double, 9> hue_matrix(double deg) {
  const double a = deg * std::numbers::pi / 180.0;
  const double c = std::cos(a);
  const double s = std::sin(a);
  const double k = 1.0 / 3.0;
  const double r = std::sqrt(k);
  return {c + (1 - c) * k,     k * (1 - c) - r * s, k * (1 - c) + r * s,
          k * (1 - c) + r * s, c + k * (1 - c),     k * (1 - c) - r * s,
          k * (1 - c) - r * s, k * (1 - c) + r * s, c + k * (1 - c)};
}

// Separable Gaussian blur with standard deviation `sigma` and clamped borders.
void gaussian_blur(float* img, double sigma) {
  if (sigma <= 0) return;
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> w(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) {
    w[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    total += w[i + radius];
  }
  for (double& v : w) v /= total;
  const int n = static_cast<int>(kImageSize);
  std::vector<double> tmp(kImageSize * kImageSize);
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    float* p = img + ch * kImageSize * kImageSize;
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += w[i + radius] * p[y * n + std::clamp(x + i, 0, n - 1)];
        tmp[y * n + x] = acc;
      }
    }
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        double acc = 0;
        for (int i = -radius; i <= radius; ++i) acc += w[i + radius] * tmp[std::clamp(y + i, 0, n - 1) * n + x];
        p[y * n + x] = static_cast<float>(acc);
      }
    }
  }
}

std::string format_param(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Distinct stream per (domain seed, class).
std::uint64_t class_seed(std::uint64_t seed, std::size_t cls) {
  SplitMix64 mix(seed ^ (0xC1A55EEDULL + 0x9E3779B97F4A7C15ULL * (cls + 1)));
  return mix.next();
}

}  // namespace

void DomainSpec::validate() const {
  if (per_class < 1) throw std::invalid_argument("domain sample count per class must be >= 1");
  if (!std::isfinite(param)) throw std::invalid_argument("domain parameter must be finite");
  switch (kind) {
    case TransformKind::identity:
    case TransformKind::invert:
      if (param != 0) throw std::invalid_argument(label() + ": transform takes no parameter");
      break;
    case TransformKind::rotate:
      if (param < -45 || param > 45) throw std::invalid_argument("rotation must lie in [-45, 45] degrees");
      break;
    case TransformKind::noise:
      if (param < 0 || param > 0.5) throw std::invalid_argument("noise sigma must lie in [0, 0.5]");
      break;
    case TransformKind::hue_shift:
      if (param < -180 || param > 180) throw std::invalid_argument("hue shift must lie in [-180, 180] degrees");
      break;
    case TransformKind::blur:
      if (param < 0 || param > 3) throw std::invalid_argument("blur sigma must lie in [0, 3] pixels");
      break;
  }
}

std::string DomainSpec::label() const {
  switch (kind) {
    case TransformKind::identity: return "identity";
    case TransformKind::invert: return "invert";
    case TransformKind::rotate: return "rotate:" + format_param(param);
    case TransformKind::noise: return "noise:" + format_param(param);
    case TransformKind::hue_shift: return "hue:" + format_param(param);
    case TransformKind::blur: return "blur:" + format_param(param);
  }
  return "unknown";
}

DomainSpec parse_domain(std::string_view text) {
  const auto colon = text.find(':');
  const std::string name(text.substr(0, colon));
  DomainSpec spec;
  if (name == "identity") {
    spec.kind = TransformKind::identity;
  } else if (name == "invert") {
    spec.kind = TransformKind::invert;
  } else if (name == "rotate") {
    spec.kind = TransformKind::rotate;
  } else if (name == "noise") {
    spec.kind = TransformKind::noise;
  } else if (name == "hue") {
    spec.kind = TransformKind::hue_shift;
  } else if (name == "blur") {
    spec.kind = TransformKind::blur;
  } else {
    throw std::invalid_argument("unknown domain transform '" + name + "'");
  }
  const bool needs_param = spec.kind != TransformKind::identity && spec.kind != TransformKind::invert;
  if (colon == std::string_view::npos) {
    if (needs_param) throw std::invalid_argument("domain '" + name + "' needs a parameter, e.g. " + name + ":1");
  } else {
    const std::string value(text.substr(colon + 1));
    std::size_t used = 0;
    try {
      spec.param = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size()) throw std::invalid_argument("bad domain parameter '" + value + "'");
  }
  spec.validate();
  return spec;
}

std::vector<DomainSpec> parse_domain_list(std::string_view text) {
  std::vector<DomainSpec> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    out.push_back(parse_domain(item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::size_t LabeledSet::classes() const {
  int mx = -1;
  for (int l : labels) mx = std::max(mx, l);
  return static_cast<std::size_t>(mx + 1);
}

void LabeledSet::validate(std::size_t classes) const {
  if (images.rank() != 4 || images.dim(0) != labels.size() || images.dim(1) != kChannels ||
      images.dim(2) != kImageSize || images.dim(3) != kImageSize) {
    throw ShapeError("labeled set: images must be [N,3,16,16] with N labels, got " + shape_str(images.shape()));
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw PreconditionError("labeled set: label " + std::to_string(l) + " outside [0," + std::to_string(classes) + ")");
    }
  }
  for (float v : images.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw NumericError("labeled set: pixel value outside [0,1]");
  }
}

LabeledSet gen_domain(const DomainSpec& spec, std::size_t classes) {
  spec.validate();
  if (classes < 1 || classes > kMaxClasses) {
    throw std::invalid_argument("class count must lie in [1, " + std::to_string(kMaxClasses) + "]");
  }
  const std::size_t n = classes * spec.per_class;
  const std::size_t plane = kImageSize * kImageSize;
  const std::size_t stride = kChannels * plane;
  LabeledSet out;
  out.images = Tensor<float>({n, kChannels, kImageSize, kImageSize});
  out.labels.resize(n);
  const double rotate = spec.kind == TransformKind::rotate ? spec.param : 0.0;
  const auto hue = hue_matrix(spec.kind == TransformKind::hue_shift ? spec.param : 0.0);

  for (std::size_t c = 0; c < classes; ++c) {
    SplitMix64 rng(class_seed(spec.seed, c));
    for (std::size_t s = 0; s < spec.per_class; ++s) {
      const std::size_t idx = c * spec.per_class + s;
      out.labels[idx] = static_cast<int>(c);
      Jitter j;
      j.tx = static_cast<int>(rng.index(5)) - 2;
      j.ty = static_cast<int>(rng.index(5)) - 2;
      j.scale = rng.uniform(0.9, 1.1);
      std::array<double, 3> fg{};
      std::array<double, 3> bg{};
      for (auto& v : fg) v = rng.uniform(0.55, 1.0);
      for (auto& v : bg) v = rng.uniform(0.0, 0.35);
      const auto mask = render_mask(c, j, rotate);
      float* img = out.images.ptr() + idx * stride;
      for (std::size_t p = 0; p < plane; ++p) {
        std::array<double, 3> rgb{};
        for (std::size_t ch = 0; ch < kChannels; ++ch) rgb[ch] = bg[ch] + mask[p] * (fg[ch] - bg[ch]);
        if (spec.kind == TransformKind::hue_shift) {
          const auto in = rgb;
          for (std::size_t r = 0; r < 3; ++r) rgb[r] = hue[r * 3] * in[0] + hue[r * 3 + 1] * in[1] + hue[r * 3 + 2] * in[2];
        }
        for (std::size_t ch = 0; ch < kChannels; ++ch) {
          double v = rgb[ch];
          if (spec.kind == TransformKind::invert) v = 1.0 - v;
          if (spec.kind == TransformKind::noise) v += spec.param * rng.normal();
          img[ch * plane + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
      if (spec.kind == TransformKind::blur) gaussian_blur(img, spec.param);
    }
  }
  return out;
}

Tensor<float> render_glyph(std::size_t cls, int dx, int dy, double scale) {
  if (cls >= kMaxClasses) throw std::invalid_argument("glyph class must lie in [0, " + std::to_string(kMaxClasses) + ")");
  if (!(scale > 0)) throw std::invalid_argument("glyph scale must be positive");
  const auto mask = render_mask(cls, Jitter{dx, dy, scale}, 0.0);
  Tensor<float> out({kImageSize, kImageSize});
  for (std::size_t p = 0; p < mask.size(); ++p) out[p] = static_cast<float>(mask[p]);
  return out;
}

LabeledSet subset(const LabeledSet& set, std::span<const std::size_t> indices) {
  LabeledSet out;
  out.images = set.images.gather0(indices);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(set.labels.at(i));
  return out;
}

LabeledSet concat(std::span<const LabeledSet> sets) {
  if (sets.empty()) throw std::invalid_argument("concat needs at least one set");
  std::vector<float> images;
  std::vector<int> labels;
  for (const auto& s : sets) {
    images.insert(images.end(), s.images.data().begin(), s.images.data().end());
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
  }
  LabeledSet out;
  out.images = Tensor<float>({labels.size(), kChannels, kImageSize, kImageSize}, std::move(images));
  out.labels = std::move(labels);
  return out;
}

std::pair<LabeledSet, LabeledSet> split(const LabeledSet& set, std::pair<double, double> fractions,
                                        std::uint64_t seed) {
  const auto [a, b] = fractions;
  if (!(a >= 0 && b >= 0) || std::abs(a + b - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be nonnegative and sum to 1");
  }
  const std::size_t classes = set.classes();
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < set.size(); ++i) by_class[static_cast<std::size_t>(set.labels[i])].push_back(i);
  SplitMix64 rng(seed);
  std::vector<std::size_t> first;
  std::vector<std::size_t> second;
  for (auto& members : by_class) {
    const auto order = permutation(members.size(), rng);
    const auto take = static_cast<std::size_t>(std::llround(a * static_cast<double>(members.size())));
    for (std::size_t r = 0; r < members.size(); ++r) (r < take ? first : second).push_back(members[order[r]]);
  }
  if (first.empty() || second.empty()) throw std::invalid_argument("split leaves one side empty");
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {subset(set, first), subset(set, second)};
}

std::vector<DomainData> gen_benchmark(const std::vector<DomainSpec>& domains, std::size_t classes,
                                      std::size_t train_per_class, std::size_t test_per_class,
                                      std::uint64_t seed) {
  if (train_per_class < 1 || test_per_class < 1) throw std::invalid_argument("per-class counts must be >= 1");
  SplitMix64 master(seed);
  std::vector<DomainData> out;
  for (const auto& d : domains) {
    DomainData dd;
    dd.spec = d;
    dd.spec.per_class = train_per_class + test_per_class;
    dd.spec.seed = master.next();
    const LabeledSet all = gen_domain(dd.spec, classes);
    const double total = static_cast<double>(dd.spec.per_class);
    auto [train, test] = split(all, {train_per_class / total, test_per_class / total}, dd.spec.seed ^ 0x5B17ULL);
    dd.train = std::move(train);
    dd.test = std::move(test);
    out.push_back(std::move(dd));
  }
  return out;
}

std::vector<DomainSpec> default_domains() {
  return {parse_domain("identity"), parse_domain("rotate:25"), parse_domain("invert"), parse_domain("noise:0.2")};
}

}  // namespace seprep::data
