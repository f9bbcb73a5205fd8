#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace satkit::rng {

// SplitMix64 finalizer; used to derive independent stream keys.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x9e3779b97f4a7c15ULL));
}

inline std::uint64_t hash_str(std::string_view s) {
  // FNV-1a 64-bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Pure key derivation: every stochastic component gets its stream from
// (seed, purpose tag, indices). Keeps separate concerns independent so e.g.
// drawing perturbation masks never shifts batch shuffling.
inline std::uint64_t key(std::uint64_t seed, std::string_view tag, std::uint64_t a = 0,
                         std::uint64_t b = 0) {
  return mix(mix(mix(seed, hash_str(tag)), a), b);
}

// Deterministic sampler over mt19937_64. Distribution transforms are written
// out explicitly instead of using std:: distributions, whose output is
// implementation-defined.
class Stream {
 public:
  explicit Stream(std::uint64_t stream_key) : eng_(splitmix64(stream_key)) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one variate per call.
  double normal(double mean = 0.0, double sigma = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Uniform index in [0, n) without modulo bias.
  std::size_t uniform_index(std::size_t n) {
    if (n <= 1) return 0;
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % static_cast<std::uint64_t>(n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % n);
  }

  // Uniform over {-1, +1}.
  double sign() { return (next_u64() & 1ULL) ? 1.0 : -1.0; }

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace satkit::rng
