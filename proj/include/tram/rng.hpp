#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace tram {

// Deterministic random stream. mt19937_64 supplies the raw bits; the
// uniform/normal/index transforms are written out explicitly instead of
// going through std::uniform_real_distribution etc., whose outputs are not
// pinned by the standard. Same seed, same call sequence, same values on
// every platform and compiler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : engine_(seed), seed_for_children_(mix(seed ^ 0xa0761d6478bd642fULL)) {}

  // Uniform in [0, 1): top 53 bits of the draw scaled by 2^-53.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform index in [0, n). Rejection-free modulo is fine here: n is always
  // tiny (class counts, batch picks) next to 2^64, so the bias is far below
  // anything observable.
  std::uint64_t index(std::uint64_t n) { return engine_() % n; }

  std::uint64_t raw() { return engine_(); }

  // Derives an independent child stream for a named purpose ("init", "data",
  // "noise", ...) so adding draws to one consumer never shifts another.
  Rng child(const std::string& tag) const {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL ^ seed_for_children_;
    for (const char c : tag) {
      h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
      h *= 0x100000001b3ULL;
    }
    Rng r(mix(h));
    r.seed_for_children_ = mix(h ^ 0xd6e8feb86659fd93ULL);
    return r;
  }

  static Rng for_run(std::uint64_t base_seed, std::uint64_t run_seed) {
    Rng r(mix(base_seed * 0x9e3779b97f4a7c15ULL + run_seed + 1));
    r.seed_for_children_ = mix(base_seed + 0x632be59bd9b4e019ULL * run_seed);
    return r;
  }

 private:
  // splitmix64 finalizer: spreads structured tag hashes over the full space.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 engine_;
  std::uint64_t seed_for_children_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace tram
