#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <type_traits>
#include <vector>

#include "fedpt/fed.hpp"

namespace fedpt {

// Differentially private server path: per-client L2 clipping plus
// tree-aggregated Gaussian noise on prefix sums of the aggregated trainable
// delta. Only the |y| trainable coordinates are ever privatized; freezing a
// block shrinks both the clipped vector and the injected noise energy.
//
// Privacy budgets are NOT computed here. Noise multipliers are taken as
// inputs; dp_noise_presets() carries the documented (sigma -> epsilon)
// pairs as metadata only.
struct DpConfig {
  double clip_norm = 0.3;
  double noise_multiplier = 0.0;  // sigma
  int report_goal = 100;          // fixed averaging divisor
  std::optional<double> epsilon_metadata;
};

struct DpPreset {
  double noise_multiplier;
  double epsilon;  // infinity encoded as +inf
};

// The shipped noise-multiplier presets and the budgets they were reported
// with (metadata; this library does no accounting).
inline const std::vector<DpPreset>& dp_noise_presets() {
  static const std::vector<DpPreset> presets = {
      {0.0, std::numeric_limits<double>::infinity()},
      {1.13, 18.71},
      {2.33, 7.83},
      {4.03, 4.19},
      {6.21, 2.60},
      {8.83, 1.77},
  };
  return presets;
}

// L2 clip to norm C: vectors inside the ball pass through bit-identically;
// longer ones are scaled onto it. The scale is backed off by a few float
// ulps so the clipped norm stays at or below C after rounding, which also
// makes the operation exactly idempotent.
template <typename S>
VectorX<S> clip_to_norm(const VectorX<S>& v, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ConfigError("clip_to_norm: clip norm must be positive");
  const double norm = v.template cast<double>().norm();
  if (norm <= clip_norm) return v;
  const double scale = clip_norm / norm * (1.0 - 4e-16) *
                       (std::is_same_v<S, float> ? (1.0 - 3.0 * 0x1.0p-24) : 1.0);
  return (v.template cast<double>() * scale).template cast<S>();
}

// Dyadic decomposition of [1, t]: the canonical interval cover, one node per
// set bit of t (walked from the most significant bit down).
struct TreeNode {
  int64_t lo = 0;
  int64_t hi = 0;
  bool operator==(const TreeNode&) const = default;
};

inline std::vector<TreeNode> noise_nodes_for(int64_t t) {
  if (t < 1) throw UsageError("noise_nodes_for: round index must be >= 1");
  std::vector<TreeNode> nodes;
  int64_t start = 1;
  for (int bit = 62; bit >= 0; --bit) {
    const int64_t len = int64_t{1} << bit;
    if (t & len) {
      nodes.push_back({start, start + len - 1});
      start += len;
    }
  }
  return nodes;
}

// Noise state is nothing but a seed, a dimension, and the round counter:
// node noise is a pure function of (seed, node) and is regenerated on
// demand, never stored.
struct TreeNoiseState {
  uint64_t noise_seed = 0;
  int64_t dim = 0;
  int64_t t = 0;  // rounds already consumed
};

// Sum of per-node Gaussian noise over the cover of [1, t]; per-coordinate
// stddev of each node is sigma * C, so the prefix variance is
// popcount(t) * (sigma C)^2. sigma = 0 returns an exact zero vector.
VectorXf tree_prefix_noise(const TreeNoiseState& state, int64_t t, double sigma, double clip_norm);

// Clipped uniform average: sum_i clip(d_i, C) / report_goal. Reduction in
// ascending client-id order. Weights p_i are deliberately ignored (they are
// private); the divisor is the configured report goal, not the count.
VectorXf dp_aggregate(std::vector<ClientUpdate>& updates, const DpConfig& cfg);

// DP-FTRL-style server update. The privatized prefix sum is
//   S~(t) = sum_{s<=t} agg(s) + tree_prefix_noise(t),
// and the round estimate g~(t) = S~(t) - S~(t-1) is formed algebraically as
// agg(t) + [noise(t) - noise(t-1)] so that sigma = 0 reproduces the plain
// momentum server bit-for-bit. Momentum gamma then runs on g~ exactly like
// the non-private SGDM server runs on the aggregate.
class DpServer {
 public:
  DpServer(DpConfig cfg, double server_lr, double momentum, uint64_t noise_seed, int64_t dim)
      : cfg_(cfg),
        state_{noise_seed, dim, 0},
        opt_(OptimizerConfig{OptKind::sgdm, server_lr, momentum}) {}

  const TreeNoiseState& noise_state() const { return state_; }

  void step(VectorXf& y, const VectorXf& aggregated) {
    state_.t += 1;
    VectorXf g = aggregated;
    if (cfg_.noise_multiplier > 0.0) {
      g += tree_prefix_noise(state_, state_.t, cfg_.noise_multiplier, cfg_.clip_norm);
      if (state_.t > 1) {
        g -= tree_prefix_noise(state_, state_.t - 1, cfg_.noise_multiplier, cfg_.clip_norm);
      }
    }
    server_step(opt_, y, g);
  }

 private:
  DpConfig cfg_;
  TreeNoiseState state_;
  Optimizer<float> opt_;
};

}  // namespace fedpt
