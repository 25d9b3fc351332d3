#pragma once

// Deterministic, platform-independent random numbers ("qasim-rng-v1").
//
// splitmix64 handles seed derivation and stream splitting, xoshiro256**
// produces the streams. Both are published fixed-point-free integer
// algorithms, so a given master seed yields identical draws on every
// platform, compiler, and thread layout. Nothing here uses <random>
// distributions, whose output is implementation-defined.

#include <array>
#include <cstdint>
#include <initializer_list>

namespace qa {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Collapses a master seed plus task coordinates (size index, instance index,
// repetition, ...) into one independent stream seed. Counter-splitting keeps
// per-task streams reproducible no matter how tasks are scheduled.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = master;
  std::uint64_t h = splitmix64_next(s);
  for (std::uint64_t p : path) {
    s = h ^ (p * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull);
    h = splitmix64_next(s);
  }
  return h;
}

class Xoshiro256ss {
 public:
  explicit Xoshiro256ss(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64_next(sm);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound) without modulo bias (Lemire's method).
  std::uint64_t below(std::uint64_t bound) {
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (lo < threshold) {
        m = static_cast<unsigned __int128>(next()) * bound;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // +1 or -1 with equal probability.
  int sign() { return (next() >> 63) ? -1 : 1; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace qa
