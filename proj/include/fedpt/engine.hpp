#pragma once

#include <functional>
#include <memory>
#include <ostream>

#include "fedpt/config.hpp"
#include "fedpt/data.hpp"
#include "fedpt/dp.hpp"
#include "fedpt/fed.hpp"
#include "fedpt/metrics.hpp"

namespace fedpt {

struct RoundResult {
  int round = 0;
  MetricsRow metrics;
  std::vector<int> participants;
  std::vector<ClientFailure> failures;
  // One digest per successful client, in reduction order; equality across
  // rounds and clients is the frozen-invariance witness.
  std::vector<uint64_t> client_frozen_digests;
};

// Test/inspection hook, called after every server update.
using RoundObserver = std::function<void(int round, const VectorXf& y)>;

// Per-(round, client) stream seed used for local batching. Deterministic
// mode is exactly this derivation plus sorted reduction.
uint64_t client_round_seed(uint64_t master_seed, int round, int client_id);

struct RunArtifacts {
  std::vector<MetricsRow> rows;
  double final_train_loss = 0.0;
  double best_eval_accuracy = 0.0;
  double final_eval_accuracy = 0.0;
  double filtered_mean_round_ms = 0.0;
};

// Owns one experiment: data, the partitioned model, optimizer and DP state,
// and the round loop of the partially-trainable federated algorithm.
class Engine {
 public:
  explicit Engine(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const PartitionedParams& params() const { return params_; }
  const BuiltModel& model() const { return model_; }
  const FederatedDataset& train_data() const { return train_; }
  int round() const { return round_; }

  // One full round: sample -> parallel client updates -> aggregate ->
  // server update. Frozen blocks are globally invariant across rounds.
  RoundResult step_round();

  double evaluate();

  // Runs all configured rounds. Rows are appended to `csv` (with header) as
  // they complete so an aborted run leaves a usable partial file.
  RunArtifacts run(std::ostream* csv = nullptr, const RoundObserver& observer = nullptr);

 private:
  std::vector<ClientResult> run_clients(const std::vector<int>& sampled);

  ExperimentConfig cfg_;
  BuiltModel model_;
  PartitionedParams params_;
  std::shared_ptr<const Dataset> train_ds_;
  std::shared_ptr<const Dataset> eval_ds_;
  FederatedDataset train_;
  std::vector<int32_t> eval_idx_;
  std::vector<int> population_;
  Optimizer<float> server_opt_;
  std::unique_ptr<DpServer> dp_server_;
  Rng sampling_rng_;
  int round_ = 0;
};

// run + metrics/checkpoint files under out_dir; repeats > 1 reruns with
// derived seeds and reports "mean ± stddev" of the final accuracy.
struct RunSummary {
  std::vector<RunArtifacts> runs;
  std::string accuracy_mean_std;  // e.g. "83.75 ± 0.16" (percent)
};

RunSummary run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                          int repeats = 1);

// Cartesian sweep over per-key value lists; one run per point, summary CSV
// with the best eval accuracy per point.
struct SweepPoint {
  std::vector<std::pair<std::string, std::string>> assignment;
  double trainable_fraction = 0.0;
  double best_eval_accuracy = 0.0;
  double final_eval_accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
};

SweepResult run_sweep(const ExperimentConfig& base,
                      const std::vector<std::pair<std::string, TomlValue>>& grid,
                      const std::filesystem::path& out_dir);

}  // namespace fedpt
