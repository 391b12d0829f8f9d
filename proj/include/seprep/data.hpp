#pragma once

// Procedural multi-domain glyph benchmark. Every domain renders the same ten
// stroke prototypes; domains differ only in the transform applied after
// per-sample jitter.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "seprep/tensor.hpp"

namespace seprep::data {

inline constexpr std::size_t kImageSize = 16;
inline constexpr std::size_t kChannels = 3;
inline constexpr std::size_t kMaxClasses = 10;

enum class TransformKind { identity, rotate, invert, noise, hue_shift, blur };

struct DomainSpec {
  TransformKind kind = TransformKind::identity;
  double param = 0.0;  // degrees for rotate/hue, sigma for noise, radius for blur
  std::size_t per_class = 700;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument when the parameter is out of range.
  void validate() const;
  // e.g. "identity", "rotate:25", "noise:0.2"
  std::string label() const;
};

// Parses "identity", "rotate:<deg>", "invert", "noise:<sigma>", "hue:<deg>",
// "blur:<radius>".
DomainSpec parse_domain(std::string_view text);
std::vector<DomainSpec> parse_domain_list(std::string_view comma_separated);

struct LabeledSet {
  Tensor<float> images;  // [N,3,16,16], values in [0,1]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t classes() const;
  void validate(std::size_t classes) const;
};

LabeledSet gen_domain(const DomainSpec& spec, std::size_t classes);

// Stroke coverage in [0,1] of class `cls`'s glyph as a [16,16] image, shifted
// by (dx, dy) pixels and scaled by `scale`, before any domain transform or
// coloring. gen_domain draws dx, dy from [-2,2] and scale from [0.9,1.1].
Tensor<float> render_glyph(std::size_t cls, int dx, int dy, double scale);

// Label-stratified split; fractions must sum to 1 and leave both sides
// nonempty.
std::pair<LabeledSet, LabeledSet> split(const LabeledSet& set, std::pair<double, double> fractions,
                                        std::uint64_t seed);

LabeledSet subset(const LabeledSet& set, std::span<const std::size_t> indices);

// Concatenates sets in order.
LabeledSet concat(std::span<const LabeledSet> sets);

struct DomainData {
  DomainSpec spec;
  LabeledSet train;
  LabeledSet test;
};

// Generates train+test splits for each domain; per-domain seeds are derived
// from `seed` so domains never share sample streams.
std::vector<DomainData> gen_benchmark(const std::vector<DomainSpec>& domains, std::size_t classes,
                                      std::size_t train_per_class, std::size_t test_per_class,
                                      std::uint64_t seed);

// identity, rotate(25), invert, noise(0.2)
std::vector<DomainSpec> default_domains();

}  // namespace seprep::data
