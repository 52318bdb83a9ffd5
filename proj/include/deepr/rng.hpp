// Deterministic random helpers. std::mt19937_64 output is fully specified by
// the standard; the distribution mappings here are pinned so that a fixed seed
// yields the same stream on every platform and stdlib.
#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace deepr {

using Rng = std::mt19937_64;

// 64-bit FNV-1a, used for stable string hashing (patient ids, vocab digests).
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the xor; decorrelates nearby seeds
  std::uint64_t z = (a ^ (b + 0x9e3779b97f4a7c15ull)) + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Uniform double in [0,1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n), n >= 1.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

template <typename T>
void shuffle_vec(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

// Draws an index from cumulative weights (strictly increasing, last = total).
inline std::size_t sample_cumulative(Rng& rng, const std::vector<double>& cum) {
  double u = uniform01(rng) * cum.back();
  std::size_t lo = 0, hi = cum.size() - 1;
  while (lo < hi) {
    std::size_t mid = (lo + hi) / 2;
    if (cum[mid] <= u)
      lo = mid + 1;
    else
      hi = mid;
  }
  return lo;
}

}  // namespace deepr
