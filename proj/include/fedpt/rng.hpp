#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string_view>

#include "fedpt/errors.hpp"

namespace fedpt {

// All randomness in the library flows through the SplitMix64 stream below.
// std::random distributions are deliberately avoided: their output is
// implementation-defined, and server and clients must be able to regenerate
// identical bytes from a shared seed on any platform.

inline constexpr uint64_t kSplitMixGamma = 0x9E3779B97F4A7C15ULL;

constexpr uint64_t splitmix_mix(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

// FNV-1a over the bytes of a name. Keys per-block generator streams.
constexpr uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    state_ += kSplitMixGamma;
    return splitmix_mix(state_);
  }

 private:
  uint64_t state_;
};

// Collapses (base, tags...) into one stream seed. Used for everything that
// needs an independent substream: per-client round seeds, tree-noise nodes,
// data generation, client sampling.
inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> tags) {
  uint64_t h = splitmix_mix(base + kSplitMixGamma);
  for (uint64_t t : tags) h = splitmix_mix(h ^ (t + kSplitMixGamma));
  return h;
}

// u64 -> double maps. The (0,1] variant feeds logarithms.
inline double u64_to_closed_open(uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

inline double u64_to_open_closed(uint64_t x) {
  return static_cast<double>((x >> 11) + 1) * 0x1.0p-53;
}

inline constexpr double kTwoPi = 6.283185307179586;

// Fills `out` with N(0, stddev^2) draws from the stream starting at `state`:
// consecutive u64 pairs feed Box-Muller, values are consumed in pair order,
// and an odd tail discards the second element of its pair. Everything is
// computed in double and cast to S at the end, so float32 output is identical
// across platforms.
template <typename S>
void gaussian_stream_fill(uint64_t state, std::span<S> out, double stddev) {
  SplitMix64 g(state);
  size_t i = 0;
  while (i < out.size()) {
    const double u1 = u64_to_open_closed(g.next());
    const double u2 = u64_to_closed_open(g.next());
    const double r = std::sqrt(-2.0 * std::log(u1));
    out[i++] = static_cast<S>(stddev * r * std::cos(kTwoPi * u2));
    if (i < out.size()) {
      out[i++] = static_cast<S>(stddev * r * std::sin(kTwoPi * u2));
    }
  }
}

// General-purpose deterministic generator built on the same stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_.next(); }

  // Unbiased integer in [0, n) by rejection.
  uint64_t below(uint64_t n) {
    if (n == 0) throw UsageError("Rng::below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = gen_.next();
    while (x >= limit) x = gen_.next();
    return x % n;
  }

  double uniform() { return u64_to_closed_open(gen_.next()); }
  double uniform_pos() { return u64_to_open_closed(gen_.next()); }

  // One Box-Muller draw per call (the sine partner is discarded; two u64 of
  // stream per value keeps call sites order-independent to reason about).
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // Marsaglia-Tsang, with the shape boost for a < 1.
  double gamma(double a) {
    if (!(a > 0.0)) throw UsageError("Rng::gamma: shape must be positive");
    if (a < 1.0) {
      const double u = uniform_pos();
      return gamma(a + 1.0) * std::pow(u, 1.0 / a);
    }
    const double d = a - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Symmetric Dirichlet(alpha). Sampled in log space so extreme
  // concentrations stay finite: log G = log Gamma(alpha + 1) + log(U)/alpha,
  // normalized with a softmax. At alpha -> 0 this degenerates to a one-hot
  // draw instead of 0/0.
  void dirichlet(double alpha, std::span<double> out) {
    if (!(alpha > 0.0)) throw UsageError("Rng::dirichlet: alpha must be positive");
    double max_log = -std::numeric_limits<double>::infinity();
    for (double& q : out) {
      const double g = gamma(alpha + 1.0);
      q = std::log(g) + std::log(uniform_pos()) / alpha;
      if (q > max_log) max_log = q;
    }
    double sum = 0.0;
    for (double& q : out) {
      q = std::exp(q - max_log);
      sum += q;
    }
    for (double& q : out) q /= sum;
  }

  // Index draw from a probability vector (walk of the cumulative sum).
  size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    for (size_t k = 0; k + 1 < probs.size(); ++k) {
      acc += probs[k];
      if (u < acc) return k;
    }
    return probs.empty() ? 0 : probs.size() - 1;
  }

 private:
  SplitMix64 gen_;
};

}  // namespace fedpt
