#include "fedpt/fed.hpp"

#include <algorithm>
#include <cmath>

namespace fedpt {

std::vector<int> sample_clients(const std::vector<int>& population, int m, Rng& rng) {
  const int n = static_cast<int>(population.size());
  if (m < 1 || m > n) {
    throw ConfigError("sample_clients: m = " + std::to_string(m) + " outside [1, " +
                      std::to_string(n) + "]");
  }
  std::vector<int> pool = population;
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(m));
  std::sort(pool.begin(), pool.end());
  return pool;
}

ClientResult client_update(const PartitionedParams& global, const BuiltModel& model,
                           const Dataset& data, std::span<const int32_t> example_idx,
                           int client_id, const LocalTrainConfig& cfg, uint64_t client_seed) {
  if (example_idx.empty()) {
    return ClientFailure{client_id, "no local examples"};
  }

  std::vector<Tensor<float>> values = reconstruct(global);
  const uint64_t digest = frozen_digest(global.blocks, values);

  // The two trainable copies a client holds: the evolving y and the flat
  // gradient. The received y stays on the "server" side of the simulation.
  VectorXf y = global.y;
  VectorXf grad(y.size());
  ScopedAlloc local_bytes(2 * y.size() * static_cast<int64_t>(sizeof(float)));

  Optimizer<float> opt(cfg.opt);
  Rng rng(client_seed);

  double loss_sum = 0.0;
  int steps_done = 0;
  const int target_steps = cfg.local_steps.value_or(-1);  // -1 = one epoch

  try {
    bool done = target_steps == 0;
    while (!done) {
      auto batches = batch_indices(example_idx, cfg.batch_size, rng, cfg.shuffle);
      for (const auto& batch : batches) {
        Tape<float> tape;
        std::vector<Tape<float>::Index> leaves;
        leaves.reserve(values.size());
        for (size_t i = 0; i < values.size(); ++i) {
          leaves.push_back(tape.leaf(values[i], global.blocks[i].trainable));
        }
        const auto input = tape.leaf(gather_batch(data, batch), false);
        const auto logits = model_forward<float>(tape, model, leaves, input);
        const auto loss = softmax_cross_entropy<float>(tape, logits, gather_labels(data, batch));
        loss_sum += static_cast<double>(tape.value(loss)[0]);

        auto grads = tape.backward(loss);
        int64_t off = 0;
        for (auto& [leaf, g] : grads) {
          std::copy_n(g.data(), g.size(), grad.data() + off);
          off += g.size();
        }
        if (off != grad.size()) {
          throw IntegrityError("client_update: gradient length mismatch");
        }
        opt.step(y, grad);
        unflatten_trainable(y, global.blocks, values);

        ++steps_done;
        if (target_steps >= 0 && steps_done >= target_steps) {
          done = true;
          break;
        }
      }
      if (target_steps < 0) done = true;  // exactly one epoch
    }
  } catch (const NumericError& e) {
    return ClientFailure{client_id, e.what()};
  }

  ClientUpdate upd;
  upd.client_id = client_id;
  upd.delta = y - global.y;
  upd.weight = static_cast<double>(example_idx.size());
  upd.mean_loss = steps_done > 0 ? loss_sum / steps_done : 0.0;
  upd.steps = steps_done;
  upd.frozen_digest = digest;
  if (!upd.delta.allFinite()) {
    return ClientFailure{client_id, "non-finite model delta"};
  }
  return upd;
}

namespace {

void sort_by_id(std::vector<ClientUpdate>& updates) {
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
}

}  // namespace

VectorXf aggregate(std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw UsageError("aggregate: no client updates");
  sort_by_id(updates);
  const int64_t dim = updates.front().delta.size();
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.delta.size() != dim) throw DimensionError("aggregate: delta length mismatch");
    if (!(u.weight > 0.0)) throw UsageError("aggregate: client weights must be positive");
    total += u.weight;
  }
  VectorXd acc = VectorXd::Zero(dim);
  for (const auto& u : updates) {
    acc.noalias() += (u.weight / total) * u.delta.cast<double>();
  }
  return acc.cast<float>();
}

VectorXf uniform_mean_deltas(std::vector<ClientUpdate>& updates, double divisor) {
  if (updates.empty()) throw UsageError("uniform_mean_deltas: no client updates");
  if (!(divisor > 0.0)) throw ConfigError("uniform_mean_deltas: divisor must be positive");
  sort_by_id(updates);
  const int64_t dim = updates.front().delta.size();
  VectorXd acc = VectorXd::Zero(dim);
  for (const auto& u : updates) {
    if (u.delta.size() != dim) throw DimensionError("uniform_mean_deltas: delta length mismatch");
    acc.noalias() += u.delta.cast<double>();
  }
  return (acc / divisor).cast<float>();
}

double evaluate_accuracy(const PartitionedParams& global, const BuiltModel& model,
                         const Dataset& data, std::span<const int32_t> idx, int batch_size) {
  if (idx.empty()) throw UsageError("evaluate_accuracy: empty evaluation set");
  std::vector<Tensor<float>> values = reconstruct(global);
  int64_t correct = 0;
  for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(idx.size(), start + static_cast<size_t>(batch_size));
    const std::span<const int32_t> batch = idx.subspan(start, end - start);

    Tape<float> tape;
    std::vector<Tape<float>::Index> leaves;
    leaves.reserve(values.size());
    for (const auto& v : values) leaves.push_back(tape.leaf(v, false));
    const auto input = tape.leaf(gather_batch(data, batch), false);
    const auto logits = model_forward<float>(tape, model, leaves, input);

    const Tensor<float>& lv = tape.value(logits);
    const int k = lv.dim(1);
    for (size_t r = 0; r < batch.size(); ++r) {
      const float* row = lv.data() + static_cast<int64_t>(r) * k;
      int best = 0;
      for (int j = 1; j < k; ++j) {
        if (row[j] > row[best]) best = j;
      }
      if (best == data.labels[static_cast<size_t>(batch[r])]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace fedpt
