#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace seprep {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen over std:: engines because its
// output sequence is fixed by a few lines of integer arithmetic, so datasets
// and initializations are reproducible across platforms and languages.
//
// Test vector: seed 0 yields 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4,
// 0x06C45D188009454F.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform in [0, n) by 128-bit multiply-shift.
  std::size_t index(std::size_t n) noexcept {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  // Standard normal by Box-Muller (one value per call).
  double normal() noexcept;

  // Derives an independent stream for a sub-task.
  SplitMix64 split() noexcept { return SplitMix64(next()); }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, SplitMix64& rng);

}  // namespace seprep
