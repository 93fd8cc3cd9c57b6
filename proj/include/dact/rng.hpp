#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dact {

// mt19937_64 with hand-rolled draw helpers. std::uniform_*_distribution is
// implementation-defined across standard libraries; these helpers keep seeded
// streams reproducible on any platform.
struct Rng {
  std::mt19937_64 eng;

  explicit Rng(uint64_t seed) : eng(seed) {}

  // [0,1) with 53 random bits
  double uniform() { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0,n); modulo bias is < 2^-40 for any n used here
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(eng() % static_cast<uint64_t>(n)); }

  std::vector<int32_t> permutation(int64_t n) {
    std::vector<int32_t> p(n);
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<int32_t>(i);
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(p[i], p[j]);
    }
    return p;
  }
};

}  // namespace dact
