#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace forestiv {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// All randomness in the library flows from one master seed; sub-streams are
// derived by stable hashing of (purpose, index) so results do not depend on
// evaluation order or thread schedule.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t s = splitmix64(master ^ hash64(purpose));
  s = splitmix64(s ^ a);
  return splitmix64(s ^ b);
}

// mt19937_64 with hand-rolled distributions. std::*_distribution output is
// implementation-defined; these are pinned so streams are reproducible on
// any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0,1) with 53 random bits
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * next_double(); }

  int bernoulli(double p) { return next_double() < p ? 1 : 0; }

  // unbiased integer in [0, bound) by rejection
  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  // Box-Muller, second draw cached
  double normal(double mean = 0.0, double sd = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + sd * spare_;
    }
    double u1 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + sd * r * std::cos(theta);
  }

  // first k elements of a partial Fisher-Yates over [0, n)
  template <typename IndexT>
  std::vector<IndexT> sample_without_replacement(IndexT n, IndexT k) {
    std::vector<IndexT> pool(static_cast<std::size_t>(n));
    for (IndexT i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
    for (IndexT i = 0; i < k; ++i) {
      const auto j = i + static_cast<IndexT>(below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    pool.resize(static_cast<std::size_t>(k));
    return pool;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace forestiv
