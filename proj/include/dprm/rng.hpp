#pragma once

// Stateless counter-based randomness: every draw is a pure function of a key.

#include <cstdint>
#include <initializer_list>

namespace dprm {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// SplitMix64 finalizer (Stafford mix 13). Bijective with full avalanche.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Classic sequential SplitMix64 step; used only for test vectors.
constexpr std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += kGolden;
  return mix64(state);
}

/// Absorbs one word into a running key.
constexpr std::uint64_t absorb(std::uint64_t key, std::int64_t word) {
  return mix64(key ^ (static_cast<std::uint64_t>(word) * 0xd6e8feb86659fd93ULL + kGolden));
}

constexpr std::uint64_t hash_words(std::uint64_t seed, std::initializer_list<std::int64_t> words) {
  std::uint64_t k = mix64(seed + kGolden);
  for (auto w : words) k = absorb(k, w);
  return k;
}

/// Seed of sample `index` in a sweep driven by `master`.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master ^ 0x5851f42d4c957f2dULL) + mix64(index + kGolden));
}

/// Uniform in the open interval (0, 1) on the midpoints of a 2^-52 grid.
constexpr double to_unit_open(std::uint64_t h) {
  return (static_cast<double>(h >> 12) + 0.5) * 0x1.0p-52;
}

/// Uniform draw number `stream` attached to a key.
constexpr double uniform_at(std::uint64_t key, std::uint64_t stream) {
  return to_unit_open(mix64(key ^ mix64(stream + 0x2545f4914f6cdd1dULL)));
}

}  // namespace dprm
