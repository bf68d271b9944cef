#pragma once

#include <cstdint>
#include <random>
#include <utility>

namespace convexvolt {

/// SplitMix64 finalizer. Used only to derive independent engine seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/**
 * Portable random stream.
 *
 * The engine is std::mt19937_64, whose output sequence is fixed by the
 * standard. Distributions are implemented here rather than taken from
 * <random> because the standard distributions are not reproducible
 * across library implementations.
 *
 *   stream seed = splitmix64(splitmix64(seed) ^ splitmix64(~stream))
 *   uniform01   = (engine() >> 11) * 2^-53            in [0, 1)
 *   uniform(a,b)= a + (b - a) * uniform01              (exactly a if a == b)
 *   below(n)    = rejection-sampled engine() mod n
 *
 * A stream is identified by (seed, stream index), so work split over
 * per-sample or per-epoch streams is identical in serial and parallel runs.
 */
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream)
      : engine_(splitmix64(splitmix64(seed) ^ splitmix64(~stream)))
  {}

  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi)
  {
    if (lo == hi) return lo;
    return lo + (hi - lo) * uniform01();
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n)
  {
    const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return r % n;
  }

  /// In-place Fisher-Yates shuffle.
  template <class Container>
  void shuffle(Container& c)
  {
    for (std::size_t i = c.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      using std::swap;
      swap(c[i - 1], c[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Stream-index namespaces so that different consumers of one seed never collide.
inline constexpr std::uint64_t kStreamSamples = 0x0000'0000'0000'0000ull;
inline constexpr std::uint64_t kStreamSplit = 0x1000'0000'0000'0000ull;
inline constexpr std::uint64_t kStreamInit = 0x2000'0000'0000'0000ull;
inline constexpr std::uint64_t kStreamEpoch = 0x3000'0000'0000'0000ull;
inline constexpr std::uint64_t kStreamConvexity = 0x4000'0000'0000'0000ull;

}  // namespace convexvolt
