#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace nlab {

// Deterministic PRNG used everywhere in the library.
//
// The generator is splitmix64, so streams are reproducible independent of the
// standard library implementation. Sub-streams are derived either by keying
// (Rng::keyed) or by drawing a fresh seed from a parent stream (child()).
// Training code derives one stream per (run seed, phase, epoch, sample) so
// results do not depend on evaluation order or parallel scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a + 0x9e3779b97f4a7c15ULL * (b + 0x632be59bd9b4e019ULL);
    return scramble(s);
  }

  // Hash a list of key parts into a seed, e.g. keyed({seed, PHASE, epoch, i}).
  static Rng keyed(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t s = 0x8e51'ecee'b7e5'41c3ULL;
    for (std::uint64_t p : parts) s = mix(s, p);
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return scramble(state_);
  }

  // Independent stream seeded from this one.
  Rng child() { return Rng(next_u64()); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n >= 1.
  int uniform_int(int n) {
    return static_cast<int>(
        (static_cast<unsigned __int128>(next_u64()) *
         static_cast<unsigned __int128>(static_cast<std::uint64_t>(n))) >>
        64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // Marsaglia-Tsang gamma sampler, shape > 0, unit scale.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static std::uint64_t scramble(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable key tags for deriving per-phase streams. Values are arbitrary but
// frozen: changing them changes every seeded run.
namespace rngkey {
constexpr std::uint64_t kGlyphs = 0x01;
constexpr std::uint64_t kNoise = 0x02;
constexpr std::uint64_t kBatches = 0x03;
constexpr std::uint64_t kInit = 0x04;
constexpr std::uint64_t kWarmupView = 0x05;
constexpr std::uint64_t kWarmupCoin = 0x06;
constexpr std::uint64_t kDividemix = 0x07;
constexpr std::uint64_t kCoteach = 0x08;
constexpr std::uint64_t kMdyrh = 0x09;
constexpr std::uint64_t kCeView = 0x0a;
constexpr std::uint64_t kExpand = 0x0b;
constexpr std::uint64_t kMix = 0x0c;
}  // namespace rngkey

}  // namespace nlab
