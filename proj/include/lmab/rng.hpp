#pragma once

#include <cstdint>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace lmab {

// splitmix64; used for deriving independent per-worker / per-episode seeds.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t s = splitmix64(base ^ 0x6a09e667f3bcc908ULL);
  s = splitmix64(s ^ splitmix64(a));
  s = splitmix64(s ^ splitmix64(b + 0x8000000000000001ULL));
  s = splitmix64(s ^ splitmix64(c + 0x4000000000000002ULL));
  return s;
}

// xoshiro256** core with explicit distribution algorithms. The standard
// library distributions are implementation-defined, which would break the
// byte-identical reproducibility contract across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : state_) {
      s = splitmix64(s);
      w = s;
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform double in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    // rejection to avoid modulo bias
    const uint64_t nn = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % nn;
    uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<int>(v % nn);
  }

  // standard normal, Box-Muller (one value per call for a fixed draw count)
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double exponential() {
    double u = uniform();
    while (u <= 0.0) u = uniform();
    return -std::log(u);
  }

  // index from a probability vector (inverse CDF walk; caller guarantees sum ~ 1)
  int categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  // Marsaglia-Tsang gamma sampler (unit scale)
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0) * std::pow(u > 0.0 ? u : 1e-300, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // symmetric Dirichlet; alpha = 1 reduces to normalized exponentials
  std::vector<double> dirichlet(int n, double alpha = 1.0) {
    std::vector<double> x(static_cast<size_t>(n));
    double sum = 0.0;
    for (auto& v : x) {
      v = alpha == 1.0 ? exponential() : gamma(alpha);
      sum += v;
    }
    if (sum <= 0.0) {
      std::fill(x.begin(), x.end(), 1.0 / n);
      return x;
    }
    for (auto& v : x) v /= sum;
    return x;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t state_[4];
};

}  // namespace lmab
