#pragma once

// Test-only finite-difference oracle. Uses nothing but repeated forward
// evaluation, so it stays independent of the backward implementation it
// checks.

#include <functional>
#include <vector>

#include "fedpt/ops.hpp"
#include "fedpt/rng.hpp"

namespace gradcheck {

using fedpt::Rng;
using fedpt::Tape;
using fedpt::Tensor;

// Builds a fresh graph over the given leaves and returns the loss node.
using GraphFn =
    std::function<Tape<double>::Index(Tape<double>&, const std::vector<Tape<double>::Index>&)>;

inline double forward_loss(const std::vector<Tensor<double>>& leaves,
                           const std::vector<bool>& trainable, const GraphFn& graph) {
  Tape<double> tape;
  std::vector<Tape<double>::Index> ids;
  ids.reserve(leaves.size());
  for (size_t i = 0; i < leaves.size(); ++i) ids.push_back(tape.leaf(leaves[i], trainable[i]));
  return tape.value(graph(tape, ids))[0];
}

// Central differences (step 1e-5, 64-bit) on sampled coordinates of every
// trainable leaf against the tape's analytic gradient. Returns the max
// relative error over all sampled coordinates.
inline double max_rel_error(std::vector<Tensor<double>> leaves, const std::vector<bool>& trainable,
                            const GraphFn& graph, int samples_per_leaf = 12,
                            uint64_t seed = 0xF00D) {
  const double h = 1e-5;

  std::map<int, Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Tape<double>::Index> ids;
    for (size_t i = 0; i < leaves.size(); ++i) ids.push_back(tape.leaf(leaves[i], trainable[i]));
    analytic = tape.backward(graph(tape, ids));
  }

  Rng rng(seed);
  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    if (!trainable[li]) continue;
    const int64_t n = leaves[li].size();
    const int64_t samples = std::min<int64_t>(n, samples_per_leaf);
    for (int64_t s = 0; s < samples; ++s) {
      const int64_t i =
          samples == n ? s : static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
      const double orig = leaves[li][i];
      leaves[li][i] = orig + h;
      const double up = forward_loss(leaves, trainable, graph);
      leaves[li][i] = orig - h;
      const double down = forward_loss(leaves, trainable, graph);
      leaves[li][i] = orig;

      const double fd = (up - down) / (2.0 * h);
      const double an = analytic.at(static_cast<int>(li))[i];
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

// Directional check over all trainable leaves at once: d/dt L(theta + t v)
// at t = 0 versus the analytic inner product <grad, v>.
inline double directional_rel_error(std::vector<Tensor<double>> leaves,
                                    const std::vector<bool>& trainable, const GraphFn& graph,
                                    uint64_t seed = 0xD112) {
  const double h = 1e-5;

  std::map<int, Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Tape<double>::Index> ids;
    for (size_t i = 0; i < leaves.size(); ++i) ids.push_back(tape.leaf(leaves[i], trainable[i]));
    analytic = tape.backward(graph(tape, ids));
  }

  Rng rng(seed);
  std::vector<Tensor<double>> direction;
  double norm2 = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor<double> d(leaves[li].shape());
    if (trainable[li]) {
      for (int64_t i = 0; i < d.size(); ++i) {
        d[i] = rng.normal();
        norm2 += d[i] * d[i];
      }
    }
    direction.push_back(std::move(d));
  }
  const double inv_norm = 1.0 / std::sqrt(norm2);

  double dot = 0.0;
  for (auto& [leaf, g] : analytic) {
    const Tensor<double>& d = direction[static_cast<size_t>(leaf)];
    for (int64_t i = 0; i < g.size(); ++i) dot += g[i] * d[i] * inv_norm;
  }

  auto shifted = [&](double t) {
    std::vector<Tensor<double>> moved = leaves;
    for (size_t li = 0; li < leaves.size(); ++li) {
      if (!trainable[li]) continue;
      for (int64_t i = 0; i < moved[li].size(); ++i) {
        moved[li][i] += t * direction[li][i] * inv_norm;
      }
    }
    return forward_loss(moved, trainable, graph);
  };
  const double fd = (shifted(h) - shifted(-h)) / (2.0 * h);
  return std::abs(fd - dot) / std::max({std::abs(fd), std::abs(dot), 1e-6});
}

inline Tensor<double> uniform_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

}  // namespace gradcheck
