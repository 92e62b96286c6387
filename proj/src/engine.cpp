#include "fedpt/engine.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <thread>

namespace fedpt {

namespace {

// Substream tags off the master seed. Every source of randomness in a run
// hangs off one of these, so (config, seed) pins the whole trajectory.
constexpr uint64_t kSeedTrainData = 1;
constexpr uint64_t kSeedEvalData = 2;
constexpr uint64_t kSeedPartition = 3;
constexpr uint64_t kSeedInit = 4;
constexpr uint64_t kSeedSampling = 5;
constexpr uint64_t kSeedNoise = 6;
constexpr uint64_t kSeedClient = 7;
constexpr uint64_t kSeedRepeat = 8;

double ms_between(std::chrono::steady_clock::time_point a,
                  std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

std::string toml_value_repr(const TomlValue& v) {
  switch (v.type) {
    case TomlValue::Type::string: return v.str;
    case TomlValue::Type::integer: return std::to_string(v.integer);
    case TomlValue::Type::floating: {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%g", v.floating);
      return buf;
    }
    case TomlValue::Type::boolean: return v.boolean ? "true" : "false";
    case TomlValue::Type::array: return "[...]";
  }
  return "?";
}

}  // namespace

uint64_t client_round_seed(uint64_t master_seed, int round, int client_id) {
  return derive_seed(master_seed,
                     {kSeedClient, static_cast<uint64_t>(round), static_cast<uint64_t>(client_id)});
}

Engine::Engine(ExperimentConfig cfg)
    : cfg_(std::move(cfg)),
      server_opt_(OptimizerConfig{}),
      sampling_rng_(0) {
  validate_config(cfg_);
  model_ = build_model(make_model_spec(cfg_));
  server_opt_ = Optimizer<float>(cfg_.server_opt);
  sampling_rng_ = Rng(derive_seed(cfg_.seed, {kSeedSampling}));

  const DataConfig& d = cfg_.data;
  train_ds_ = std::make_shared<Dataset>(
      synth_gaussian_mixture(d.classes, d.feature_shape, d.train_examples, d.separation,
                             d.noise_std, derive_seed(cfg_.seed, {kSeedTrainData})));
  eval_ds_ = std::make_shared<Dataset>(
      synth_gaussian_mixture(d.classes, d.feature_shape, d.eval_examples, d.separation,
                             d.noise_std, derive_seed(cfg_.seed, {kSeedEvalData})));
  eval_idx_.resize(static_cast<size_t>(eval_ds_->size()));
  std::iota(eval_idx_.begin(), eval_idx_.end(), 0);

  const uint64_t part_seed = derive_seed(cfg_.seed, {kSeedPartition});
  if (d.partition == "shard") {
    train_ = shard_equal(train_ds_, d.num_clients, part_seed);
  } else {
    train_ = dirichlet_partition(
        train_ds_, PartitionConfig{d.num_clients, d.alpha, d.examples_per_client, part_seed});
  }
  population_.resize(static_cast<size_t>(train_.num_clients()));
  std::iota(population_.begin(), population_.end(), 0);

  params_ = apply_freeze_plan(model_.spec, make_freeze_plan(cfg_),
                              derive_seed(cfg_.seed, {kSeedInit}));
  for (const std::string& w : params_.warnings) std::cerr << "warning: " << w << '\n';

  if (cfg_.dp) {
    const double momentum =
        cfg_.server_opt.kind == OptKind::sgdm ? cfg_.server_opt.momentum : 0.0;
    dp_server_ = std::make_unique<DpServer>(cfg_.dp_cfg, cfg_.server_opt.lr, momentum,
                                            derive_seed(cfg_.seed, {kSeedNoise}),
                                            params_.y.size());
  }
}

std::vector<ClientResult> Engine::run_clients(const std::vector<int>& sampled) {
  std::vector<ClientResult> results(sampled.size());
  const LocalTrainConfig tc{cfg_.client_opt, cfg_.batch_size, cfg_.local_steps, true};

  auto work = [&](size_t i) {
    const int id = sampled[i];
    results[i] = client_update(params_, model_, *train_ds_,
                               train_.clients[static_cast<size_t>(id)], id, tc,
                               client_round_seed(cfg_.seed, round_, id));
  };

  if (cfg_.threads <= 1) {
    for (size_t i = 0; i < sampled.size(); ++i) work(i);
    return results;
  }

  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= sampled.size()) return;
      try {
        work(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  const int n = std::min<int>(cfg_.threads, static_cast<int>(sampled.size()));
  threads.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

RoundResult Engine::step_round() {
  const int t = round_;
  if (t >= cfg_.rounds) throw UsageError("step_round: the configured rounds are already done");

  MemoryGauge::reset_peak();
  std::vector<int> sampled = sample_clients(population_, cfg_.clients_per_round, sampling_rng_);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<ClientResult> results = run_clients(sampled);
  const auto t1 = std::chrono::steady_clock::now();

  RoundResult rr;
  rr.round = t;
  rr.participants = sampled;
  std::vector<ClientUpdate> updates;
  updates.reserve(results.size());
  for (ClientResult& res : results) {
    if (auto* upd = std::get_if<ClientUpdate>(&res)) {
      updates.push_back(std::move(*upd));
    } else {
      ClientFailure fail = std::get<ClientFailure>(res);
      std::cerr << "round " << t << ": dropping client " << fail.client_id << " (" << fail.reason
                << ")\n";
      rr.failures.push_back(std::move(fail));
    }
  }
  if (updates.empty()) {
    throw NumericError("round " + std::to_string(t) + ": all sampled clients failed");
  }
  for (const ClientUpdate& u : updates) rr.client_frozen_digests.push_back(u.frozen_digest);

  std::optional<double> clip_fraction;
  const bool clipping = cfg_.dp || cfg_.clip_norm.has_value();
  if (clipping) {
    const double c = cfg_.dp ? cfg_.dp_cfg.clip_norm : *cfg_.clip_norm;
    int clipped = 0;
    for (ClientUpdate& u : updates) {
      if (u.delta.cast<double>().norm() > c) ++clipped;
      u.delta = clip_to_norm(u.delta, c);
    }
    clip_fraction = static_cast<double>(clipped) / static_cast<double>(updates.size());
  }

  if (cfg_.dp) {
    const VectorXf agg = dp_aggregate(updates, cfg_.dp_cfg);
    dp_server_->step(params_.y, agg);
  } else if (cfg_.weighting == "uniform") {
    const VectorXf agg = uniform_mean_deltas(updates, static_cast<double>(updates.size()));
    server_step(server_opt_, params_.y, agg);
  } else {
    const VectorXf agg = aggregate(updates);
    server_step(server_opt_, params_.y, agg);
  }

  double loss = 0.0;
  for (const ClientUpdate& u : updates) loss += u.mean_loss;
  loss /= static_cast<double>(updates.size());

  const CommCost cost = comm_cost(params_.y.size(), cfg_.clients_per_round);
  MetricsRow& row = rr.metrics;
  row.round = t;
  row.train_loss = loss;
  row.trainable_params = params_.trainable_params();
  row.frozen_params = params_.frozen_params();
  row.bytes_down = cost.bytes_down;
  row.bytes_up = cost.bytes_up;
  row.round_ms = cfg_.record_timing ? ms_between(t0, t1) : 0.0;
  row.peak_alloc_bytes = MemoryGauge::peak_bytes();
  row.clip_fraction = clip_fraction;
  if (cfg_.dp) row.noise_multiplier = cfg_.dp_cfg.noise_multiplier;

  ++round_;
  if (round_ % cfg_.eval_every == 0 || round_ == cfg_.rounds) {
    row.eval_accuracy = evaluate();
  }
  return rr;
}

double Engine::evaluate() {
  return evaluate_accuracy(params_, model_, *eval_ds_, eval_idx_);
}

RunArtifacts Engine::run(std::ostream* csv, const RoundObserver& observer) {
  if (csv) *csv << kMetricsCsvHeader << '\n' << std::flush;

  RunArtifacts art;
  std::vector<double> times;
  times.reserve(static_cast<size_t>(cfg_.rounds));
  while (round_ < cfg_.rounds) {
    RoundResult rr = step_round();
    if (csv) *csv << format_metrics_row(rr.metrics) << '\n' << std::flush;
    art.rows.push_back(rr.metrics);
    art.final_train_loss = rr.metrics.train_loss;
    if (rr.metrics.eval_accuracy) {
      art.final_eval_accuracy = *rr.metrics.eval_accuracy;
      art.best_eval_accuracy = std::max(art.best_eval_accuracy, art.final_eval_accuracy);
    }
    times.push_back(rr.metrics.round_ms);
    if (observer) observer(rr.round, params_.y);
  }
  art.filtered_mean_round_ms = mean_of(filter_outliers_one_sd(times));
  return art;
}

RunSummary run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                          int repeats) {
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  std::filesystem::create_directories(out_dir);

  RunSummary summary;
  std::vector<double> final_acc_pct;
  for (int rep = 0; rep < repeats; ++rep) {
    ExperimentConfig c = cfg;
    if (rep > 0) c.seed = derive_seed(cfg.seed, {kSeedRepeat, static_cast<uint64_t>(rep)});

    const std::string tag = repeats == 1 ? "" : "_rep" + std::to_string(rep);
    const auto csv_path = out_dir / ("metrics" + tag + ".csv");
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot write " + csv_path.string());

    Engine engine(std::move(c));
    RunArtifacts art = engine.run(&csv);
    save_checkpoint(out_dir / ("checkpoint" + tag + ".bin"), engine.params());

    final_acc_pct.push_back(art.final_eval_accuracy * 100.0);
    summary.runs.push_back(std::move(art));
  }
  summary.accuracy_mean_std = format_mean_std(final_acc_pct);

  std::ofstream f(out_dir / "summary.txt");
  f << "runs: " << repeats << '\n';
  f << "final_accuracy: " << summary.accuracy_mean_std << '\n';
  std::vector<double> times;
  for (const auto& r : summary.runs) times.push_back(r.filtered_mean_round_ms);
  f << "mean_round_ms_filtered: " << format_mean_std(times) << '\n';
  return summary;
}

SweepResult run_sweep(const ExperimentConfig& base,
                      const std::vector<std::pair<std::string, TomlValue>>& grid,
                      const std::filesystem::path& out_dir) {
  if (grid.empty()) throw ConfigError("sweep: empty grid");
  for (const auto& [key, value] : grid) {
    if (value.type != TomlValue::Type::array || value.array.empty()) {
      throw ConfigError("sweep: grid key '" + key + "' must be a non-empty array");
    }
  }

  // Expand and validate every point before running anything.
  std::vector<size_t> radix(grid.size()), idx(grid.size(), 0);
  size_t total = 1;
  for (size_t i = 0; i < grid.size(); ++i) {
    radix[i] = grid[i].second.array.size();
    total *= radix[i];
  }
  struct Point {
    ExperimentConfig cfg;
    std::vector<std::pair<std::string, std::string>> assignment;
  };
  std::vector<Point> points;
  points.reserve(total);
  for (size_t p = 0; p < total; ++p) {
    std::vector<std::pair<std::string, TomlValue>> overrides;
    std::vector<std::pair<std::string, std::string>> assignment;
    for (size_t i = 0; i < grid.size(); ++i) {
      const TomlValue& v = grid[i].second.array[idx[i]];
      overrides.emplace_back(grid[i].first, v);
      assignment.emplace_back(grid[i].first, toml_value_repr(v));
    }
    points.push_back({apply_overrides(base, overrides), std::move(assignment)});
    for (size_t i = grid.size(); i-- > 0;) {
      if (++idx[i] < radix[i]) break;
      idx[i] = 0;
    }
  }

  std::filesystem::create_directories(out_dir);
  SweepResult result;
  for (size_t p = 0; p < points.size(); ++p) {
    const auto dir = out_dir / ("sweep_" + std::to_string(p));
    std::filesystem::create_directories(dir);
    std::ofstream csv(dir / "metrics.csv");
    Engine engine(points[p].cfg);
    const double fraction = engine.params().fraction();
    RunArtifacts art = engine.run(&csv);

    SweepPoint sp;
    sp.assignment = points[p].assignment;
    sp.trainable_fraction = fraction;
    sp.best_eval_accuracy = art.best_eval_accuracy;
    sp.final_eval_accuracy = art.final_eval_accuracy;
    result.points.push_back(std::move(sp));
  }

  std::ofstream f(out_dir / "sweep_summary.csv");
  for (size_t i = 0; i < grid.size(); ++i) f << grid[i].first << ',';
  f << "trainable_pct,best_eval_accuracy,final_eval_accuracy\n";
  for (const SweepPoint& sp : result.points) {
    for (const auto& [key, value] : sp.assignment) f << value << ',';
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%.2f,%.4f,%.4f", sp.trainable_fraction * 100.0,
                  sp.best_eval_accuracy, sp.final_eval_accuracy);
    f << buf << '\n';
  }
  return result;
}

}  // namespace fedpt
