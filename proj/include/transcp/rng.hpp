#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace transcp {

// Deterministic generator built on splitmix64. All randomness in the project
// flows through this type so runs replay exactly for a fixed seed, independent
// of platform library choices.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; pairs cached.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n).
  uint64_t randint(uint64_t n) {
    // 128-bit multiply keeps the mapping unbiased enough for data generation.
    return uint64_t((__uint128_t(next_u64()) * n) >> 64);
  }

  template <typename V>
  void shuffle(V& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(randint(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Picks k distinct indices from [0, n) in selection order.
  std::vector<size_t> sample_without_replacement(size_t n, size_t k) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::vector<size_t> out;
    out.reserve(k);
    for (size_t i = 0; i < k && i < n; ++i) {
      size_t j = i + size_t(randint(n - i));
      std::swap(idx[i], idx[j]);
      out.push_back(idx[i]);
    }
    return out;
  }

  // Derives an independent stream from (seed, tag, counters). Used to give
  // every sample, epoch, and parameter its own reproducible stream.
  static uint64_t derive(uint64_t seed, const std::string& tag, uint64_t a = 0,
                         uint64_t b = 0) {
    uint64_t h = 0xcbf29ce484222325ULL ^ seed;
    for (char c : tag) h = (h ^ uint64_t(uint8_t(c))) * 0x100000001b3ULL;
    h = mix(h ^ mix(a + 0x9e3779b97f4a7c15ULL));
    h = mix(h ^ mix(b + 0x6a09e667f3bcc909ULL));
    return h;
  }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace transcp
