#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <random>

namespace avb {

/// SplitMix64: a 64-bit generator whose state can be forked into
/// independent child streams with split(). Satisfies
/// UniformRandomBitGenerator, so it plugs into the <random> distributions.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Child generator seeded from this stream's next output mixed with `tag`.
  SplitMix64 split(std::uint64_t tag = 0) noexcept {
    SplitMix64 mixer((*this)() ^ (tag * 0xd1b54a32d192ed03ULL));
    return SplitMix64(mixer());
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(*this);
  }

  double normal() { return normal_(*this); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(*this);
  }

 private:
  std::uint64_t state_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// In-place Fisher-Yates shuffle driven by `rng`.
template <class It>
void fisher_yates(It first, It last, SplitMix64& rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) std::iter_swap(first + (i - 1), first + rng.below(i));
}

}  // namespace avb
