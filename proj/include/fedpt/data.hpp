#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedpt/rng.hpp"
#include "fedpt/tensor.hpp"

namespace fedpt {

// Centralized dataset: one row-major feature row per example. feature_shape
// describes how a row folds into a per-example tensor ({d} or {h,w,c}).
struct Dataset {
  MatrixRM<float> features;
  std::vector<int32_t> labels;
  std::vector<int> feature_shape;
  int num_classes = 0;

  int64_t size() const { return features.rows(); }
  int64_t feature_dim() const { return features.cols(); }
};

// Client partition over a shared immutable dataset.
struct FederatedDataset {
  std::shared_ptr<const Dataset> source;
  std::vector<std::vector<int32_t>> clients;  // per-client example indices

  int num_clients() const { return static_cast<int>(clients.size()); }
};

struct PartitionConfig {
  int num_clients = 0;
  double alpha = 1.0;
  // Exact per-client count; 0 assigns the whole dataset in near-equal shares.
  int examples_per_client = 0;
  uint64_t seed = 0;
};

// K-class Gaussian mixture with means on scaled unit directions (axis k for
// K <= d, otherwise deterministic random directions) and isotropic noise.
// Labels are balanced to within one example.
Dataset synth_gaussian_mixture(int num_classes, const std::vector<int>& feature_shape, int64_t n,
                               double separation, double noise_std, uint64_t seed);

// Label-Dirichlet partition: each client draws a label distribution from a
// symmetric Dirichlet(alpha) and fills its quota by sampling labels from it
// and popping from per-label pools; an exhausted label falls back to a
// uniform draw over all remaining examples, which keeps per-client counts
// exact.
FederatedDataset dirichlet_partition(std::shared_ptr<const Dataset> data,
                                     const PartitionConfig& cfg);

// IID control: random permutation chopped into equal shards (remainder
// dropped).
FederatedDataset shard_equal(std::shared_ptr<const Dataset> data, int num_clients, uint64_t seed);

// One epoch of batch index lists over a client's examples. The last partial
// batch is kept.
std::vector<std::vector<int32_t>> batch_indices(std::span<const int32_t> examples, int batch_size,
                                                Rng& rng, bool shuffle);

// Gathers examples into a [batch, ...feature_shape] tensor.
Tensor<float> gather_batch(const Dataset& data, std::span<const int32_t> idx);

std::vector<int32_t> gather_labels(const Dataset& data, std::span<const int32_t> idx);

// Dump/load: one JSON header line (class count, shape, client index lists)
// followed by little-endian float32 features and int32 labels.
void save_dataset(const std::filesystem::path& path, const FederatedDataset& fed);
FederatedDataset load_dataset(const std::filesystem::path& path);

}  // namespace fedpt
