#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedpt/ops.hpp"

namespace fedpt {

enum class LayerKind { dense, conv2d, groupnorm, maxpool, flatten, relu };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::groupnorm: return "groupnorm";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::relu: return "relu";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind{};
  std::string name;   // unique block name; freeze plans refer to these
  int units = 0;      // dense
  int kernel = 0;     // conv2d (square, odd)
  int channels = 0;   // conv2d output channels
  int groups = 0;     // groupnorm

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  std::vector<int> input_shape;  // per-example shape, e.g. {28,28,1} or {32}
  std::vector<LayerSpec> layers;

  bool operator==(const ModelSpec&) const = default;
};

enum class ParamRole { weight, bias, norm_scale, norm_shift };

inline const char* param_role_name(ParamRole r) {
  switch (r) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::norm_scale: return "norm_scale";
    case ParamRole::norm_shift: return "norm_shift";
  }
  return "?";
}

// One parameter tensor of the model. `layer` groups blocks for freeze plans;
// weight-role blocks are the only ones with a random initializer.
struct ParamBlock {
  std::string name;    // e.g. "dense_0.w"
  std::string layer;   // e.g. "dense_0"
  ParamRole role{};
  std::vector<int> shape;
  double init_stddev = 0.0;  // 0 for constant-initialized roles
  bool trainable = true;

  int64_t size() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
};

struct BuiltModel {
  ModelSpec spec;
  std::vector<ParamBlock> blocks;            // spec order
  std::vector<std::vector<int>> out_shapes;  // per layer, per-example

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& b : blocks) n += b.size();
    return n;
  }

  int64_t layer_params(const std::string& layer) const {
    int64_t n = 0;
    for (const auto& b : blocks) {
      if (b.layer == layer) n += b.size();
    }
    return n;
  }

  int num_classes() const {
    return out_shapes.empty() ? 0 : out_shapes.back().at(0);
  }
};

// Shape-checks the spec and lays out its parameter blocks in spec order.
// Initialization scale for weights is sqrt(2 / (fan_in + fan_out)); biases
// start at zero, norm scales at one, norm shifts at zero. Frozen blocks are
// regenerated with exactly this rule, so the scale choice is shared by every
// reconstruction.
inline BuiltModel build_model(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ConfigError("model spec has no layers");
  if (spec.input_shape.empty()) throw ConfigError("model spec has no input shape");
  for (int d : spec.input_shape) {
    if (d <= 0) throw ConfigError("model input dimensions must be positive");
  }

  BuiltModel m;
  m.spec = spec;
  std::map<std::string, int> seen;
  std::vector<int> cur = spec.input_shape;

  auto flat_size = [](const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  };

  for (const LayerSpec& l : spec.layers) {
    if (l.name.empty()) throw ConfigError("every layer needs a name");
    if (seen.count(l.name)) throw ConfigError("duplicate layer name: " + l.name);
    seen[l.name] = 1;

    switch (l.kind) {
      case LayerKind::dense: {
        if (cur.size() != 1) {
          throw ConfigError("layer " + l.name + ": dense expects flat input (add a flatten layer)");
        }
        if (l.units <= 0) throw ConfigError("layer " + l.name + ": units must be positive");
        const int in = cur[0];
        const double stddev = std::sqrt(2.0 / (in + l.units));
        m.blocks.push_back({l.name + ".w", l.name, ParamRole::weight, {in, l.units}, stddev, true});
        m.blocks.push_back({l.name + ".b", l.name, ParamRole::bias, {l.units}, 0.0, true});
        cur = {l.units};
        break;
      }
      case LayerKind::conv2d: {
        if (cur.size() != 3) throw ConfigError("layer " + l.name + ": conv2d expects h x w x c input");
        if (l.kernel <= 0 || l.kernel % 2 == 0) {
          throw ConfigError("layer " + l.name + ": kernel must be odd and positive");
        }
        if (l.channels <= 0) throw ConfigError("layer " + l.name + ": channels must be positive");
        const int cin = cur[2];
        const int64_t fan_in = static_cast<int64_t>(l.kernel) * l.kernel * cin;
        const int64_t fan_out = static_cast<int64_t>(l.kernel) * l.kernel * l.channels;
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
        m.blocks.push_back({l.name + ".w", l.name, ParamRole::weight,
                            {l.kernel, l.kernel, cin, l.channels}, stddev, true});
        m.blocks.push_back({l.name + ".b", l.name, ParamRole::bias, {l.channels}, 0.0, true});
        cur = {cur[0], cur[1], l.channels};
        break;
      }
      case LayerKind::groupnorm: {
        if (cur.size() != 3) throw ConfigError("layer " + l.name + ": groupnorm expects h x w x c input");
        const int c = cur[2];
        if (l.groups < 1 || c % l.groups != 0) {
          throw ConfigError("layer " + l.name + ": channels (" + std::to_string(c) +
                            ") not divisible by groups (" + std::to_string(l.groups) + ")");
        }
        m.blocks.push_back({l.name + ".scale", l.name, ParamRole::norm_scale, {c}, 0.0, true});
        m.blocks.push_back({l.name + ".shift", l.name, ParamRole::norm_shift, {c}, 0.0, true});
        break;
      }
      case LayerKind::maxpool: {
        if (cur.size() != 3) throw ConfigError("layer " + l.name + ": maxpool expects h x w x c input");
        if (cur[0] % 2 != 0 || cur[1] % 2 != 0) {
          throw ConfigError("layer " + l.name + ": maxpool needs even spatial extents");
        }
        cur = {cur[0] / 2, cur[1] / 2, cur[2]};
        break;
      }
      case LayerKind::flatten: {
        cur = {static_cast<int>(flat_size(cur))};
        break;
      }
      case LayerKind::relu:
        break;
    }
    m.out_shapes.push_back(cur);
  }

  if (cur.size() != 1) {
    throw ConfigError("model must end in a flat class-score layer");
  }
  return m;
}

// Runs the spec as tape ops. `params` are leaf indices in block order (one
// per ParamBlock); `input` is the [batch, ...input_shape] leaf.
template <typename S>
typename Tape<S>::Index model_forward(Tape<S>& tape, const BuiltModel& m,
                                      std::span<const typename Tape<S>::Index> params,
                                      typename Tape<S>::Index input) {
  if (params.size() != m.blocks.size()) {
    throw UsageError("model_forward: expected " + std::to_string(m.blocks.size()) +
                     " parameter leaves, got " + std::to_string(params.size()));
  }
  size_t p = 0;
  typename Tape<S>::Index cur = input;
  for (const LayerSpec& l : m.spec.layers) {
    switch (l.kind) {
      case LayerKind::dense: {
        auto w = params[p++], b = params[p++];
        cur = affine(tape, cur, w, b);
        break;
      }
      case LayerKind::conv2d: {
        auto k = params[p++], b = params[p++];
        cur = conv2d_same(tape, cur, k, b);
        break;
      }
      case LayerKind::groupnorm: {
        auto scale = params[p++], shift = params[p++];
        cur = group_norm(tape, cur, scale, shift, l.groups);
        break;
      }
      case LayerKind::maxpool:
        cur = maxpool2x2(tape, cur);
        break;
      case LayerKind::flatten:
        cur = flatten(tape, cur);
        break;
      case LayerKind::relu:
        cur = relu(tape, cur);
        break;
    }
  }
  return cur;
}

// The Table-6-shaped character-recognition CNN: 28x28x1 input, two 5x5 conv
// blocks with group norm after the second, and a 512-wide dense head over 62
// classes. Block names are what freeze plans reference.
inline ModelSpec emnist_cnn_spec(int groupnorm_groups = 8) {
  ModelSpec s;
  s.input_shape = {28, 28, 1};
  s.layers = {
      {LayerKind::conv2d, "conv_0", 0, 5, 32, 0},
      {LayerKind::relu, "relu_0"},
      {LayerKind::maxpool, "pool_0"},
      {LayerKind::conv2d, "conv_1", 0, 5, 64, 0},
      {LayerKind::groupnorm, "groupnorm_0", 0, 0, 0, groupnorm_groups},
      {LayerKind::relu, "relu_1"},
      {LayerKind::maxpool, "pool_1"},
      {LayerKind::flatten, "flatten_0"},
      {LayerKind::dense, "dense_0", 512},
      {LayerKind::relu, "relu_2"},
      {LayerKind::dense, "dense_1", 62},
  };
  return s;
}

// Plain MLP over flat features: dims = {in, hidden..., classes}.
inline ModelSpec mlp_spec(const std::vector<int>& dims) {
  if (dims.size() < 2) throw ConfigError("mlp_dims needs at least input and output sizes");
  ModelSpec s;
  s.input_shape = {dims[0]};
  for (size_t i = 1; i < dims.size(); ++i) {
    s.layers.push_back({LayerKind::dense, "dense_" + std::to_string(i - 1), dims[i]});
    if (i + 1 < dims.size()) {
      s.layers.push_back({LayerKind::relu, "relu_" + std::to_string(i - 1)});
    }
  }
  return s;
}

}  // namespace fedpt
