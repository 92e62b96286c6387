#pragma once

#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedpt/model.hpp"
#include "fedpt/rng.hpp"
#include "fedpt/tensor.hpp"

namespace fedpt {

// Which layer blocks stay at their initial values for the whole run. Norm
// layers named here are kept trainable under the protect-norm policy (the
// default), since freezing them is known to hurt the model badly out of
// proportion to their size.
struct FreezePlan {
  std::vector<std::string> frozen_layers;
  bool protect_norm = true;

  bool operator==(const FreezePlan&) const = default;
};

// Deterministic per-block Gaussian draw. The stream seed is
// master_seed XOR FNV-1a(block_name) fed to SplitMix64; uniform u64 pairs go
// through Box-Muller. Same (seed, name, shape, stddev) gives byte-identical
// tensors on every platform, which is what lets a server and its clients
// share frozen parameters as a single seed.
template <typename S>
Tensor<S> seeded_gaussian_block(uint64_t master_seed, std::string_view block_name,
                                std::vector<int> shape, double stddev) {
  if (!(stddev > 0.0)) throw UsageError("seeded_gaussian_block: stddev must be positive");
  Tensor<S> t(std::move(shape));
  gaussian_stream_fill<S>(master_seed ^ fnv1a64(block_name),
                          std::span<S>(t.data(), static_cast<size_t>(t.size())), stddev);
  return t;
}

// Initial value of one block under the shared initialization rule.
template <typename S>
Tensor<S> init_param(uint64_t master_seed, const ParamBlock& b) {
  switch (b.role) {
    case ParamRole::weight:
      return seeded_gaussian_block<S>(master_seed, b.name, b.shape, b.init_stddev);
    case ParamRole::bias:
    case ParamRole::norm_shift:
      return Tensor<S>::zeros(b.shape);
    case ParamRole::norm_scale:
      return Tensor<S>::constant(b.shape, S{1});
  }
  throw IntegrityError("init_param: unknown role");
}

template <typename S>
std::vector<Tensor<S>> init_full_params(uint64_t master_seed, const std::vector<ParamBlock>& blocks) {
  std::vector<Tensor<S>> out;
  out.reserve(blocks.size());
  for (const ParamBlock& b : blocks) out.push_back(init_param<S>(master_seed, b));
  return out;
}

namespace detail {

// Marks each block's trainable flag from the plan. Returns warnings for norm
// blocks rescued by the protect-norm policy.
inline std::vector<std::string> resolve_trainable_flags(std::vector<ParamBlock>& blocks,
                                                        const FreezePlan& plan) {
  std::vector<std::string> warnings;
  for (const std::string& layer : plan.frozen_layers) {
    bool found = false;
    bool warned = false;
    for (ParamBlock& b : blocks) {
      if (b.layer != layer) continue;
      found = true;
      const bool is_norm = b.role == ParamRole::norm_scale || b.role == ParamRole::norm_shift;
      if (is_norm && plan.protect_norm) {
        if (!warned) {
          warnings.push_back("freeze plan names norm layer '" + layer +
                             "'; kept trainable by the protect-norm policy");
          warned = true;
        }
      } else {
        b.trainable = false;
      }
    }
    if (!found) throw ConfigError("freeze plan names unknown block: " + layer);
  }
  bool any_trainable = false;
  for (const ParamBlock& b : blocks) any_trainable = any_trainable || b.trainable;
  if (!any_trainable) throw ConfigError("freeze plan leaves no trainable blocks");
  return warnings;
}

}  // namespace detail

inline int64_t trainable_count(const std::vector<ParamBlock>& blocks) {
  int64_t n = 0;
  for (const auto& b : blocks) {
    if (b.trainable) n += b.size();
  }
  return n;
}

inline int64_t total_count(const std::vector<ParamBlock>& blocks) {
  int64_t n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

// |y| / |x| for a plan against a model spec.
inline double trainable_fraction(const FreezePlan& plan, const ModelSpec& spec) {
  BuiltModel m = build_model(spec);
  detail::resolve_trainable_flags(m.blocks, plan);
  return static_cast<double>(trainable_count(m.blocks)) /
         static_cast<double>(total_count(m.blocks));
}

// Global model state: the trainable flat vector y, the master seed z that
// regenerates everything frozen, and the plan/spec needed to interpret both.
struct PartitionedParams {
  ModelSpec spec;
  std::vector<ParamBlock> blocks;  // trainable flags resolved
  FreezePlan plan;
  uint64_t master_seed = 0;  // z
  VectorXf y;
  std::vector<std::string> warnings;

  int64_t trainable_params() const { return trainable_count(blocks); }
  int64_t total_params() const { return total_count(blocks); }
  int64_t frozen_params() const { return total_params() - trainable_params(); }
  double fraction() const {
    return static_cast<double>(trainable_params()) / static_cast<double>(total_params());
  }
};

// Order-preserving copy of the trainable blocks into one flat vector.
template <typename S>
VectorX<S> flatten_trainable(const std::vector<ParamBlock>& blocks,
                             const std::vector<Tensor<S>>& values) {
  if (blocks.size() != values.size()) {
    throw IntegrityError("flatten_trainable: block/value count mismatch");
  }
  VectorX<S> y(trainable_count(blocks));
  int64_t off = 0;
  for (size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].trainable) continue;
    const int64_t n = values[i].size();
    if (n != blocks[i].size()) throw IntegrityError("flatten_trainable: value size mismatch");
    std::memcpy(y.data() + off, values[i].data(), static_cast<size_t>(n) * sizeof(S));
    off += n;
  }
  return y;
}

// Inverse of flatten_trainable: scatters y back into the trainable blocks.
template <typename S>
void unflatten_trainable(const VectorX<S>& y, const std::vector<ParamBlock>& blocks,
                         std::vector<Tensor<S>>& values) {
  if (y.size() != trainable_count(blocks)) {
    throw IntegrityError("unflatten_trainable: flat length " + std::to_string(y.size()) +
                         " != trainable count " + std::to_string(trainable_count(blocks)));
  }
  int64_t off = 0;
  for (size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].trainable) continue;
    const int64_t n = blocks[i].size();
    std::memcpy(values[i].data(), y.data() + off, static_cast<size_t>(n) * sizeof(S));
    off += n;
  }
}

// Splits a freshly initialized model into (y, z): trainable initial values
// are copied into y, frozen blocks are dropped and live on only as the seed.
inline PartitionedParams apply_freeze_plan(const ModelSpec& spec, const FreezePlan& plan,
                                           uint64_t master_seed) {
  BuiltModel m = build_model(spec);
  PartitionedParams p;
  p.spec = m.spec;
  p.blocks = std::move(m.blocks);
  p.plan = plan;
  p.master_seed = master_seed;
  p.warnings = detail::resolve_trainable_flags(p.blocks, plan);

  p.y = VectorXf(trainable_count(p.blocks));
  int64_t off = 0;
  for (const ParamBlock& b : p.blocks) {
    if (!b.trainable) continue;
    Tensor<float> v = init_param<float>(master_seed, b);
    std::memcpy(p.y.data() + off, v.data(), static_cast<size_t>(v.size()) * sizeof(float));
    off += v.size();
  }
  return p;
}

// x = Reconstruct(y, z): trainable blocks filled from y in block order,
// frozen blocks regenerated from the seed with the shared initialization
// rule. Pure: same (y, z, plan, spec) gives byte-identical tensors.
inline std::vector<Tensor<float>> reconstruct(const std::vector<ParamBlock>& blocks,
                                              const VectorXf& y, uint64_t master_seed) {
  if (y.size() != trainable_count(blocks)) {
    throw IntegrityError("reconstruct: |y| = " + std::to_string(y.size()) +
                         " does not match plan (" + std::to_string(trainable_count(blocks)) + ")");
  }
  std::vector<Tensor<float>> values;
  values.reserve(blocks.size());
  int64_t off = 0;
  for (const ParamBlock& b : blocks) {
    if (b.trainable) {
      Tensor<float> v(b.shape);
      std::memcpy(v.data(), y.data() + off, static_cast<size_t>(v.size()) * sizeof(float));
      off += v.size();
      values.push_back(std::move(v));
    } else {
      values.push_back(init_param<float>(master_seed, b));
    }
  }
  return values;
}

inline std::vector<Tensor<float>> reconstruct(const PartitionedParams& p) {
  return reconstruct(p.blocks, p.y, p.master_seed);
}

// FNV-1a over the bytes of every frozen block, in block order. Clients report
// this digest so a run can prove the frozen parameters never drift.
inline uint64_t frozen_digest(const std::vector<ParamBlock>& blocks,
                              const std::vector<Tensor<float>>& values) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (size_t i = 0; i < blocks.size(); ++i) {
    if (blocks[i].trainable) continue;
    const auto* bytes = reinterpret_cast<const uint8_t*>(values[i].data());
    const size_t n = static_cast<size_t>(values[i].size()) * sizeof(float);
    for (size_t j = 0; j < n; ++j) {
      h ^= bytes[j];
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

}  // namespace fedpt
