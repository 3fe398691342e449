#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rsopuf {

/// Named seed. All randomness in the library descends from one of these.
struct Seed {
  std::uint64_t value = 0;
  friend bool operator==(Seed, Seed) = default;
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Derives an independent sub-seed for a named purpose (FNV-1a over the tag).
inline Seed derive_seed(Seed base, std::string_view tag, std::uint64_t index = 0) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return Seed{splitmix64(base.value ^ splitmix64(h ^ splitmix64(index)))};
}

inline Rng make_rng(Seed seed) { return Rng(seed.value); }

/// Gaussian noise stream owned by a single evaluator.
class NoiseStream {
 public:
  explicit NoiseStream(Seed seed) : rng_(seed.value) {}

  double standard_normal() { return normal_(rng_); }

 private:
  Rng rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace rsopuf
