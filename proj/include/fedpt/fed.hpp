#pragma once

#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedpt/data.hpp"
#include "fedpt/optim.hpp"
#include "fedpt/partition.hpp"

namespace fedpt {

// One client's contribution to a round: the delta on the trainable vector
// (never the full model), its aggregation weight (local example count), and
// local stats.
struct ClientUpdate {
  int client_id = 0;
  VectorXf delta;
  double weight = 0.0;  // p_i
  double mean_loss = 0.0;
  int steps = 0;
  uint64_t frozen_digest = 0;
};

struct ClientFailure {
  int client_id = 0;
  std::string reason;
};

using ClientResult = std::variant<ClientUpdate, ClientFailure>;

// Uniform sample of m distinct clients (partial Fisher-Yates over a copy).
std::vector<int> sample_clients(const std::vector<int>& population, int m, Rng& rng);

struct LocalTrainConfig {
  OptimizerConfig opt;
  int batch_size = 16;
  // One epoch over the client's data when unset; a fixed step count
  // (possibly 0) when set.
  std::optional<int> local_steps;
  bool shuffle = true;
};

// Runs tau local optimizer steps on the trainable part only and returns
// delta = y_final - y_initial. Frozen blocks are reconstructed for the
// forward pass and never touched. A non-finite loss fails the client.
ClientResult client_update(const PartitionedParams& global, const BuiltModel& model,
                           const Dataset& data, std::span<const int32_t> example_idx,
                           int client_id, const LocalTrainConfig& cfg, uint64_t client_seed);

// Weighted average sum(p_i d_i) / sum(p_i), reduced in ascending client-id
// order so the result is independent of arrival order. Weights enter as
// ratios of double-precision totals, which keeps the result invariant under
// exactly-representable rescalings of all p_i.
VectorXf aggregate(std::vector<ClientUpdate>& updates);

// sum(d_i) / divisor with uniform weights, same sorted reduction. The DP
// path and the plain uniform-weighting mode share this reduction so that a
// zero noise multiplier reproduces the non-private run bit-for-bit.
VectorXf uniform_mean_deltas(std::vector<ClientUpdate>& updates, double divisor);

// ServerOpt update of y with pseudo-gradient -delta.
inline void server_step(Optimizer<float>& opt, VectorXf& y, const VectorXf& delta) {
  if (!delta.allFinite()) throw NumericError("server_step: non-finite aggregate delta");
  VectorXf pseudo_grad = -delta;
  opt.step(y, pseudo_grad);
}

// Centralized accuracy of the model at (y, z) over an example set.
double evaluate_accuracy(const PartitionedParams& global, const BuiltModel& model,
                         const Dataset& data, std::span<const int32_t> idx,
                         int batch_size = 256);

}  // namespace fedpt
