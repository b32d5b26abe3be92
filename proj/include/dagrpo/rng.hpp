// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace dagrpo {

using Rng = std::mt19937_64;

/// Purposes used when deriving independent streams from one experiment seed.
enum class StreamPurpose : std::uint64_t {
  prompt = 1,
  rollout = 2,
  anchor = 3,
  eval_prompt = 4,
  eval_rollout = 5,
  test = 99,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Deterministic stream for (seed, purpose, path...). Streams for distinct paths are
/// independent for all practical purposes; no stream depends on scheduling.
inline Rng derive_stream(std::uint64_t seed, StreamPurpose purpose,
                         std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t h = mix64(seed ^ 0x5bd1e995ULL);
  h = mix64(h ^ static_cast<std::uint64_t>(purpose));
  for (auto p : path) h = mix64(h ^ (p + 0x632be59bd9b4e019ULL));
  return Rng{h};
}

inline double uniform01(Rng& rng) {
  // 53 random mantissa bits, in [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  std::uniform_int_distribution<int> dist(lo, hi_inclusive);
  return dist(rng);
}

}  // namespace dagrpo
