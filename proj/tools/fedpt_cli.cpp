// Command-line driver: run / sweep / eval / inspect over flat TOML configs.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>

#include "fedpt/engine.hpp"

namespace {

using namespace fedpt;

void print_model_table(const ExperimentConfig& cfg) {
  const BuiltModel m = build_model(make_model_spec(cfg));
  std::printf("%-14s %-16s %12s\n", "layer", "output shape", "params");
  for (size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerSpec& l = m.spec.layers[i];
    std::string shape = "(";
    for (size_t j = 0; j < m.out_shapes[i].size(); ++j) {
      shape += (j ? ", " : "") + std::to_string(m.out_shapes[i][j]);
    }
    shape += ")";
    std::printf("%-14s %-16s %12lld\n", l.name.c_str(), shape.c_str(),
                static_cast<long long>(m.layer_params(l.name)));
  }
  std::printf("%-14s %-16s %12lld\n", "total", "", static_cast<long long>(m.total_params()));
}

int cmd_inspect(const std::string& config_path, const std::string& checkpoint_path) {
  ExperimentConfig cfg;
  PartitionedParams params;
  if (!checkpoint_path.empty()) {
    params = load_checkpoint(checkpoint_path);
    cfg.model = "";  // model comes from the checkpoint spec
    const BuiltModel m = build_model(params.spec);
    std::printf("checkpoint: %s\n", checkpoint_path.c_str());
    std::printf("z (master seed): %llu\n", static_cast<unsigned long long>(params.master_seed));
    std::printf("%-14s %-16s %12s\n", "layer", "output shape", "params");
    for (size_t i = 0; i < m.spec.layers.size(); ++i) {
      const LayerSpec& l = m.spec.layers[i];
      std::printf("%-14s %-16s %12lld\n", l.name.c_str(), "",
                  static_cast<long long>(m.layer_params(l.name)));
    }
  } else {
    cfg = load_config(config_path);
    print_model_table(cfg);
    params = apply_freeze_plan(make_model_spec(cfg), make_freeze_plan(cfg), cfg.seed);
  }

  const double fraction = params.fraction();
  const CommCost cost = comm_cost(params.y.size(), 1);
  std::printf("\ntrainable params:    %lld\n", static_cast<long long>(params.trainable_params()));
  std::printf("frozen params:       %lld\n", static_cast<long long>(params.frozen_params()));
  std::printf("trainable fraction:  %.2f%%\n", fraction * 100.0);
  std::printf("comm reduction:      %.1fx\n", reduction_factor(fraction));
  std::printf("bytes down / client: %lld\n", static_cast<long long>(cost.bytes_down));
  std::printf("bytes up / client:   %lld\n", static_cast<long long>(cost.bytes_up));
  if (!params.plan.frozen_layers.empty()) {
    std::printf("frozen blocks:      ");
    for (const auto& b : params.plan.frozen_layers) std::printf(" %s", b.c_str());
    std::printf("\n");
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path) {
  const ExperimentConfig cfg = load_config(config_path);
  PartitionedParams params = load_checkpoint(checkpoint_path);
  const BuiltModel model = build_model(params.spec);
  if (!(make_model_spec(cfg) == params.spec)) {
    throw ConfigError("eval: checkpoint model does not match the config model");
  }

  // Held-out split regenerated exactly as the training run built it.
  const Dataset eval_set = synth_gaussian_mixture(
      cfg.data.classes, cfg.data.feature_shape, cfg.data.eval_examples, cfg.data.separation,
      cfg.data.noise_std, derive_seed(cfg.seed, {2}));
  std::vector<int32_t> idx(static_cast<size_t>(eval_set.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const double acc = evaluate_accuracy(params, model, eval_set, idx);
  std::printf("eval_accuracy: %.4f\n", acc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedpt: federated training of partially trainable networks"};
  app.require_subcommand(1);

  std::string config_path, grid_path, out_dir = "out", checkpoint_path;
  uint64_t seed = 0;
  bool seed_set = false;
  int repeats = 1;

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "experiment config (flat TOML)")->required();
  run->add_option("--seed", seed, "override the master seed")->each([&](const std::string&) {
    seed_set = true;
  });
  run->add_option("--repeats", repeats, "number of seeds to run (mean ± stddev reported)");
  run->add_option("--out", out_dir, "output directory");

  auto* sweep = app.add_subcommand("sweep", "grid sweep over config keys");
  sweep->add_option("--config", config_path, "base config (flat TOML)")->required();
  sweep->add_option("--grid", grid_path, "grid file: key = [values...]")->required();
  sweep->add_option("--out", out_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the config's held-out split");
  eval->add_option("--config", config_path, "experiment config")->required();
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  auto* inspect = app.add_subcommand("inspect", "print the model/plan/comm-cost table");
  inspect->add_option("--config", config_path, "experiment config");
  inspect->add_option("--checkpoint", checkpoint_path, "checkpoint file");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(run)) {
      fedpt::ExperimentConfig cfg = fedpt::load_config(config_path);
      if (seed_set) cfg.seed = seed;
      const auto summary = fedpt::run_experiment(cfg, out_dir, repeats);
      std::printf("final_accuracy: %s\n", summary.accuracy_mean_std.c_str());
      std::printf("outputs in %s\n", out_dir.c_str());
    } else if (app.got_subcommand(sweep)) {
      const fedpt::ExperimentConfig cfg = fedpt::load_config(config_path);
      const auto grid = fedpt::parse_toml_file_ordered(grid_path);
      const auto result = fedpt::run_sweep(cfg, grid, out_dir);
      std::printf("%zu sweep points; summary in %s/sweep_summary.csv\n", result.points.size(),
                  out_dir.c_str());
    } else if (app.got_subcommand(eval)) {
      return cmd_eval(config_path, checkpoint_path);
    } else if (app.got_subcommand(inspect)) {
      if (config_path.empty() && checkpoint_path.empty()) {
        std::fprintf(stderr, "inspect needs --config or --checkpoint\n");
        return 2;
      }
      return cmd_inspect(config_path, checkpoint_path);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
