#pragma once

#include <cstdint>
#include <vector>

#include "dprm/lattice.hpp"
#include "dprm/rng.hpp"

namespace dprm {

/// Simple random walk S_0..S_length started at `start`; step n is a pure
/// function of (seed, n).
template <int D>
std::vector<Site<D>> sample_walk(std::uint64_t seed, int length, Site<D> start = {}) {
  std::vector<Site<D>> path;
  path.reserve(static_cast<std::size_t>(length) + 1);
  path.push_back(start);
  for (int n = 1; n <= length; ++n) {
    const std::uint64_t h = hash_words(seed, {0x77616c6b, n});
    const int dir = static_cast<int>((h >> 32) % (2u * D));
    start[dir / 2] += (dir % 2 == 0) ? 1 : -1;
    path.push_back(start);
  }
  return path;
}

}  // namespace dprm
