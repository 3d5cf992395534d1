#pragma once

// Seedable random streams with platform-independent draws.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. Distribution code is implemented here because the standard
// library distributions are implementation-defined.
//
// Stream splitting: Rng::derive(seed, {tag...}) folds each tag into
// splitmix64(seed) in order, so distinct tag lists give unrelated streams.
// The trainer uses tags (purpose, step, sample slot).

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <string_view>
#include <vector>

namespace multimae {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a, used to turn parameter names into stream tags.
inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  /// Independent child stream identified by a list of tags.
  static Rng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(seed);
    std::uint64_t i = 0;
    for (std::uint64_t t : tags) {
      s = splitmix64(s ^ splitmix64(t + 0x51ed270b27c3a9f1ULL * ++i));
    }
    return Rng(s);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal (Marsaglia polar method).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  /// Normal(0, std) truncated to [-2 std, 2 std] by resampling.
  double truncated_normal(double std) {
    for (;;) {
      const double z = normal();
      if (z >= -2.0 && z <= 2.0) return z * std;
    }
  }

  /// log of a Gamma(shape, 1) draw (Marsaglia-Tsang). Working in log space
  /// keeps very small shapes from underflowing to exactly zero.
  double log_gamma_draw(double shape) {
    if (shape < 1.0) {
      // G(a) = G(a + 1) * U^(1/a)
      const double boost = std::log(uniform_open0()) / shape;
      return log_gamma_draw(shape + 1.0) + boost;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open0();
      if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v);
    }
  }

  double gamma(double shape) { return std::exp(log_gamma_draw(shape)); }

  /// Fisher-Yates shuffle driven by this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace multimae
