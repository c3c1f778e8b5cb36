#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace rankdistill {

// splitmix64; used for seed derivation and hashing strings into seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent child seed from a base seed and a label.
// Every consumer of randomness gets its own named stream so adding a
// consumer never shifts the draws of another.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  std::uint64_t h = splitmix64(base ^ 0x5851f42d4c957f2dULL);
  for (unsigned char c : label) h = splitmix64(h ^ c);
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b) {
  return derive_seed(derive_seed(base, a), b);
}

// Uniform draws built directly on the mt19937_64 output stream.
// The standard pins the engine's sequence but not the library
// distributions, so the distributions here are our own: results are
// identical on every platform for a given seed.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), unbiased via rejection
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // [lo, hi] inclusive
  long uniform_range(long lo, long hi) {
    return lo + static_cast<long>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // n distinct indices from [0, pool), order randomized
  std::vector<std::size_t> sample_without_replacement(std::size_t pool, std::size_t n);

 private:
  std::mt19937_64 engine_;
};

inline std::vector<std::size_t> RandomSource::sample_without_replacement(std::size_t pool, std::size_t n) {
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  if (n > pool) n = pool;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_int(pool - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

}  // namespace rankdistill
