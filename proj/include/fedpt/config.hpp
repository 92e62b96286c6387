#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedpt/dp.hpp"
#include "fedpt/model.hpp"
#include "fedpt/optim.hpp"
#include "fedpt/partition.hpp"
#include "fedpt/toml.hpp"

namespace fedpt {

struct DataConfig {
  std::string kind = "mixture";  // gaussian mixture; feature_shape picks flat vs image
  int classes = 4;
  std::vector<int> feature_shape = {32};
  int train_examples = 4000;
  int eval_examples = 1000;
  double separation = 6.0;
  double noise_std = 1.0;
  std::string partition = "dirichlet";  // or "shard"
  double alpha = 1.0;
  int num_clients = 40;
  int examples_per_client = 100;  // 0 = assign everything in near-equal shares
};

// Declarative description of one experiment. load_config fills this from a
// flat TOML file over documented defaults; unknown keys are rejected.
struct ExperimentConfig {
  std::string preset;  // "emnist-cnn" | "mixture-mlp" | "" (defaults)

  std::string model = "mlp";
  std::vector<int> mlp_dims = {32, 64, 4};
  int groupnorm_groups = 8;

  std::vector<std::string> freeze;
  bool protect_norm = true;

  int rounds = 100;
  int clients_per_round = 10;
  OptimizerConfig client_opt{OptKind::sgd, 0.05};
  OptimizerConfig server_opt{OptKind::sgd, 0.5};
  int batch_size = 16;
  std::optional<int> local_steps;  // unset = one local epoch
  int eval_every = 10;
  uint64_t seed = 42;

  std::string weighting = "examples";  // or "uniform" (divides by report_goal)
  std::optional<double> clip_norm;     // non-DP clipping when set

  bool dp = false;
  DpConfig dp_cfg;

  int threads = 1;
  bool record_timing = true;
  bool fedavg_baseline = false;

  DataConfig data;
};

// Named defaults for the shipped tasks. "emnist-cnn" is the Table-7/8 row
// (1500 rounds, 20 clients, batch 16, client SGD 0.05, server SGD 0.5) over
// the 28x28x1/62-class CNN with synthetic image data; "mixture-mlp" is the
// desk-scale 4-class mixture with a 32-512-4 MLP.
std::vector<std::string> known_presets();
void apply_preset(ExperimentConfig& cfg, const std::string& name);

ExperimentConfig config_from_table(const TomlTable& table);
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies sweep overrides (same keys as the config file) on top of a base.
ExperimentConfig apply_overrides(const ExperimentConfig& base,
                                 const std::vector<std::pair<std::string, TomlValue>>& overrides);

// Semantic checks beyond parsing (model/data shape agreement, DP ranges...).
void validate_config(const ExperimentConfig& cfg);

// Model spec selected by the config.
ModelSpec make_model_spec(const ExperimentConfig& cfg);
FreezePlan make_freeze_plan(const ExperimentConfig& cfg);

// Checkpoint file: one JSON header line (spec, plan, z, byte length of y)
// followed by y as little-endian float32.
void save_checkpoint(const std::filesystem::path& path, const PartitionedParams& params);
PartitionedParams load_checkpoint(const std::filesystem::path& path);

}  // namespace fedpt
