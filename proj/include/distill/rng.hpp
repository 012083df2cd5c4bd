#pragma once

// Platform-independent random streams. Every stochastic decision is drawn
// from a stream keyed by (seed, context hash, index), so a worker pool
// reproduces serial output exactly.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>

namespace distill {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = kFnvOffset) noexcept {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

/// Hash of a token sequence; tokens are separated by a 0x1f unit separator.
inline std::uint64_t hash_tokens(std::span<const std::string> tokens) noexcept {
  std::uint64_t h = kFnvOffset;
  for (const auto& t : tokens) {
    h = fnv1a(t, h);
    h = fnv1a(std::string_view("\x1f", 1), h);
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) noexcept {
  return splitmix64(a ^ splitmix64(b));
}

inline std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t context_hash,
                                        std::uint64_t index) noexcept {
  return mix_seed(mix_seed(seed, context_hash), index);
}

/// mt19937_64 is fully specified by the standard; the distributions in
/// <random> are not, so conversions are done by hand.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [lo, hi], via rejection to avoid modulo bias.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    const std::uint64_t span = hi - lo + 1;
    if (span == 0) return engine_();
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + v % span;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace distill
