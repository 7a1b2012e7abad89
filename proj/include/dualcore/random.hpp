#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dualcore {

// splitmix64; used to mix seeds and derive independent substreams.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// mt19937_64 with hand-rolled distributions. The engine's output sequence is
// pinned by the standard; std::*_distribution is not, so we avoid it to keep
// streams identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed0_(seed), eng_(mix64(seed)) {}

  std::uint64_t bits() { return eng_(); }

  // uniform in [0, 1) with 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n), n >= 1
  std::int64_t below(std::int64_t n) {
    return static_cast<std::int64_t>(static_cast<double>(n) * uniform());
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; draws two uniforms per call, no cached spare.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Independent substream identified by (tag_a, tag_b); order-independent,
  // so per-sample streams do not depend on processing order.
  Rng fork(std::uint64_t tag_a, std::uint64_t tag_b = 0) const {
    return Rng(mix64(seed0_ ^ mix64(tag_a ^ mix64(tag_b + 0x5851f42d4c957f2dull))));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(static_cast<std::int64_t>(i)))]);
    }
  }

 private:
  std::uint64_t seed0_;
  std::mt19937_64 eng_;
};

}  // namespace dualcore
