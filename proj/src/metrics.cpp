#include "fedpt/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace fedpt {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::string s;
  s += std::to_string(r.round);
  s += ',' + fmt("%.6f", r.train_loss);
  s += ',';
  if (r.eval_accuracy) s += fmt("%.4f", *r.eval_accuracy);
  s += ',' + std::to_string(r.trainable_params);
  s += ',' + std::to_string(r.frozen_params);
  s += ',' + std::to_string(r.bytes_down);
  s += ',' + std::to_string(r.bytes_up);
  s += ',' + fmt("%.3f", r.round_ms);
  s += ',' + std::to_string(r.peak_alloc_bytes);
  s += ',';
  if (r.clip_fraction) s += fmt("%.4f", *r.clip_fraction);
  s += ',';
  if (r.noise_multiplier) s += fmt("%.4g", *r.noise_multiplier);
  return s;
}

void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  os << kMetricsCsvHeader << '\n';
  for (const auto& r : rows) os << format_metrics_row(r) << '\n';
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  write_metrics_csv(f, rows);
  if (!f.good()) throw IoError("write failed: " + path.string());
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<double> filter_outliers_one_sd(const std::vector<double>& values) {
  if (values.size() < 2) return values;
  const double m = mean_of(values);
  double var = 0.0;
  for (double x : values) var += (x - m) * (x - m);
  const double sd = std::sqrt(var / static_cast<double>(values.size()));
  std::vector<double> kept;
  kept.reserve(values.size());
  for (double x : values) {
    if (std::abs(x - m) <= sd) kept.push_back(x);
  }
  return kept;
}

std::string format_mean_std(const std::vector<double>& values, int decimals) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.*f ± %.*f", decimals, mean_of(values), decimals,
                stddev_of(values));
  return buf;
}

}  // namespace fedpt
