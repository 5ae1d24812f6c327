#pragma once

// Counter-based pseudo-random streams.
//
// Every random draw in the generator is a pure function of (key, counter), so
// any implementation that reproduces the SplitMix64 finalizer below reproduces
// the streams bit for bit. Keys are derived from a 64-bit seed by mixing in a
// domain-separation constant, which gives independent sub-streams for symbols,
// phases, arrivals, noise and so on.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace jamlab {

/// SplitMix64 increment (2^64 / golden ratio).
inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

/// SplitMix64 output finalizer (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Domain-separation constants. The values are arbitrary but frozen; changing
/// any of them changes every generated dataset.
enum class Stream : std::uint64_t {
  kJamming = 0x4A414D4D494E4700ULL,   // "JAMMING"
  kGnss = 0x474E53535F534947ULL,      // "GNSS_SIG"
  kNoise = 0x4157474E5F4E4F49ULL,     // "AWGN_NOI"
  kSymbols = 0x53594D424F4C5300ULL,   // "SYMBOLS"
  kPhases = 0x5048415345530000ULL,    // "PHASES"
  kArrivals = 0x4152524956414C53ULL,  // "ARRIVALS"
  kShuffle = 0x53485546464C4500ULL,   // "SHUFFLE"
  kDropout = 0x44524F504F555400ULL,   // "DROPOUT"
  kInit = 0x494E495457454947ULL,      // "INITWEIG"
  kSplit = 0x53504C4954000000ULL,     // "SPLIT"
  kTheory = 0x5448454F52590000ULL,    // "THEORY"
};

/// Key of the sub-stream `s` under `seed`.
constexpr std::uint64_t substream_key(std::uint64_t seed, Stream s) noexcept {
  return mix64(seed ^ mix64(static_cast<std::uint64_t>(s)));
}

/// Counter-mode SplitMix64: the i-th output is mix64(key + (i + 1) * gamma).
class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}
  constexpr CounterRng(std::uint64_t seed, Stream s) noexcept
      : key_(substream_key(seed, s)) {}

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

  /// Output at an explicit counter position, without advancing.
  constexpr std::uint64_t at(std::uint64_t i) const noexcept {
    return mix64(key_ + (i + 1) * kGoldenGamma);
  }

  constexpr std::uint64_t next_u64() noexcept { return at(counter_++); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  /// Uniform integer on [0, n) by 128-bit multiply (Lemire, no rejection).
  std::uint64_t uniform_index(std::uint64_t n) noexcept {
    const unsigned __int128 product =
        static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(product >> 64);
  }

  /// Standard normal via Box-Muller; consumes exactly two outputs.
  double normal() noexcept {
    // 1 - u keeps the argument of log in (0, 1].
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Poisson count by Knuth's product method; intended for small means.
  unsigned poisson(double mean) noexcept {
    const double limit = std::exp(-mean);
    unsigned k = 0;
    double p = uniform();
    while (p > limit) {
      ++k;
      p *= uniform();
    }
    return k;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace jamlab
