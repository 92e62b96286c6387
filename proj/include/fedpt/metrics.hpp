#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fedpt/errors.hpp"

namespace fedpt {

// Exact per-round wire cost. Downlink carries y plus the 8-byte master seed
// per participant; uplink carries only the |y| trainable floats back -- never
// the frozen parameters and no seed.
struct CommCost {
  int64_t bytes_down = 0;
  int64_t bytes_up = 0;
};

inline CommCost comm_cost(int64_t y_len, int clients, int seed_bytes = 8) {
  if (y_len < 1) throw ConfigError("comm_cost: |y| must be >= 1");
  if (clients < 1) throw ConfigError("comm_cost: clients per round must be >= 1");
  return {clients * (4 * y_len + seed_bytes), clients * 4 * y_len};
}

// 1 / trainable_fraction. The 8 seed bytes are negligible against any real
// model and are excluded by convention.
inline double reduction_factor(double trainable_fraction) {
  if (!(trainable_fraction > 0.0) || trainable_fraction > 1.0) {
    throw ConfigError("reduction_factor: fraction must be in (0, 1]");
  }
  return 1.0 / trainable_fraction;
}

// One metrics CSV row. Optional fields print as empty cells: eval_accuracy
// on non-eval rounds, clip stats when clipping is off.
struct MetricsRow {
  int round = 0;
  double train_loss = 0.0;
  std::optional<double> eval_accuracy;
  int64_t trainable_params = 0;
  int64_t frozen_params = 0;
  int64_t bytes_down = 0;
  int64_t bytes_up = 0;
  double round_ms = 0.0;
  int64_t peak_alloc_bytes = 0;
  std::optional<double> clip_fraction;
  std::optional<double> noise_multiplier;
};

inline constexpr const char* kMetricsCsvHeader =
    "round,train_loss,eval_accuracy,trainable_params,frozen_params,bytes_down,bytes_up,"
    "round_ms,peak_alloc_bytes,clip_fraction,noise_multiplier";

std::string format_metrics_row(const MetricsRow& row);

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);

// Drops values deviating from the mean by more than one standard deviation
// (the aberrant-round filter applied to per-round wall times).
std::vector<double> filter_outliers_one_sd(const std::vector<double>& values);

double mean_of(const std::vector<double>& values);
double stddev_of(const std::vector<double>& values);

// "83.75 ± 0.16" (mean ± sample stddev over repeated runs).
std::string format_mean_std(const std::vector<double>& values, int decimals = 2);

}  // namespace fedpt
