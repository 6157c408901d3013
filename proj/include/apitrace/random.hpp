#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace apitrace {

// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a coordinate. Used for every
/// seeded stream (per tree, per run, per sweep cell) so results never depend
/// on execution order.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return splitmix64(seed ^ splitmix64(index));
}

constexpr std::uint64_t mix_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> coords) noexcept {
  for (auto c : coords) {
    seed = mix_seed(seed, c);
  }
  return seed;
}

/// Human-readable statement of mix_seed, recorded in model files.
inline constexpr std::string_view k_seed_mixing_rule =
    "child = splitmix64(parent ^ splitmix64(index)); splitmix64(x): x += 0x9e3779b97f4a7c15; "
    "x = (x ^ x>>30) * 0xbf58476d1ce4e5b9; x = (x ^ x>>27) * 0x94d049bb133111eb; x ^ x>>31; "
    "engine = mt19937_64(child)";

/// Portable random stream: the engine is fully specified by the standard and
/// the distributions below are written out so draws match on every platform
/// (the std:: distributions are implementation-defined).
class random_stream {
public:
  explicit random_stream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t uniform_index(std::uint64_t bound) {
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % bound);
    std::uint64_t x = engine_();
    while (x >= limit) {
      x = engine_();
    }
    return x % bound;
  }

  /// Uniform real in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

private:
  std::mt19937_64 engine_;
};

} // namespace apitrace
