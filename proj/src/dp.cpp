#include "fedpt/dp.hpp"

namespace fedpt {

namespace {
constexpr uint64_t kNoiseNodeTag = 0x7EE0'0000'0000'0001ULL;
}

VectorXf tree_prefix_noise(const TreeNoiseState& state, int64_t t, double sigma,
                           double clip_norm) {
  if (t < 1) throw UsageError("tree_prefix_noise: round index must be >= 1");
  if (sigma < 0.0) throw ConfigError("tree_prefix_noise: noise multiplier must be >= 0");
  if (sigma == 0.0) return VectorXf::Zero(state.dim);

  const double node_std = sigma * clip_norm;
  VectorXd acc = VectorXd::Zero(state.dim);
  std::vector<double> buf(static_cast<size_t>(state.dim));
  for (const TreeNode& node : noise_nodes_for(t)) {
    const uint64_t seed = derive_seed(
        state.noise_seed,
        {kNoiseNodeTag, static_cast<uint64_t>(node.lo), static_cast<uint64_t>(node.hi)});
    gaussian_stream_fill<double>(seed, buf, node_std);
    for (int64_t i = 0; i < state.dim; ++i) acc[i] += buf[static_cast<size_t>(i)];
  }
  return acc.cast<float>();
}

VectorXf dp_aggregate(std::vector<ClientUpdate>& updates, const DpConfig& cfg) {
  if (updates.empty()) throw UsageError("dp_aggregate: no client updates");
  if (cfg.report_goal < 1) throw ConfigError("dp_aggregate: report goal must be >= 1");
  for (ClientUpdate& u : updates) {
    u.delta = clip_to_norm(u.delta, cfg.clip_norm);
  }
  return uniform_mean_deltas(updates, static_cast<double>(cfg.report_goal));
}

}  // namespace fedpt
