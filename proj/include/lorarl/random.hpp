#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace lorarl {

using Rng = std::mt19937_64;

// Derives an independent stream from a tuple of counters, e.g.
// (master seed, step, member). Same tuple, same stream.
inline Rng derive_rng(std::initializer_list<uint64_t> keys) {
  std::vector<uint32_t> words;
  words.reserve(keys.size() * 2 + 1);
  words.push_back(0x6c6f7261u);
  for (uint64_t k : keys) {
    words.push_back(static_cast<uint32_t>(k & 0xffffffffu));
    words.push_back(static_cast<uint32_t>(k >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Uniform in [0, 1) built from the raw 53 high bits so results do not depend
// on the standard library's distribution implementation.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

inline uint64_t uniform_int(Rng& rng, uint64_t n) {
  // n > 0; rejection sampling avoids modulo bias.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

}  // namespace lorarl
