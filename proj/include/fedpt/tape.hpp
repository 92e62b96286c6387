#pragma once

#include <functional>
#include <map>
#include <utility>
#include <vector>

#include "fedpt/tensor.hpp"

namespace fedpt {

// Reverse-mode tape. Nodes are appended during the forward pass, so index
// order is a topological order and backward() is a single reverse sweep.
// A node requires a gradient iff any of its inputs does; gradient buffers are
// only ever allocated for requiring nodes, so frozen parameters cost neither
// gradient memory nor backward compute.
template <typename S>
class Tape {
 public:
  using Index = int;
  using BackwardFn = std::function<void(Tape&, const Tensor<S>&)>;
  using GradMap = std::map<Index, Tensor<S>>;

  // Finite checks on op outputs and accumulated gradients; NaN/Inf raises
  // NumericError at the op that produced it.
  bool check_finite = true;

  Index leaf(Tensor<S> value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), requires_grad, true, nullptr});
    if (requires_grad) trainable_leaves_.push_back(last_index());
    return last_index();
  }

  // Records an op output. `requires_grad` must be the OR over the op's
  // inputs; `backward` routes the upstream gradient to them.
  Index emit(Tensor<S> value, bool requires_grad, BackwardFn backward) {
    if (check_finite && !value.all_finite()) {
      throw NumericError("non-finite value in forward pass");
    }
    nodes_.push_back(Node{std::move(value), requires_grad, false, std::move(backward)});
    return last_index();
  }

  const Tensor<S>& value(Index i) const { return nodes_[static_cast<size_t>(i)].value; }
  bool requires_grad(Index i) const { return nodes_[static_cast<size_t>(i)].requires_grad; }
  size_t node_count() const { return nodes_.size(); }

  // Adds `g` into a node's gradient. No-op for non-requiring nodes, which is
  // what keeps frozen branches allocation-free.
  void accumulate(Index i, Tensor<S>&& g) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.requires_grad) return;
    if (check_finite && !g.all_finite()) {
      throw NumericError("non-finite value in backward pass");
    }
    if (grads_[static_cast<size_t>(i)].empty()) {
      if (!g.same_shape(n.value)) {
        throw DimensionError("gradient shape does not match node value");
      }
      grads_[static_cast<size_t>(i)] = std::move(g);
    } else {
      grads_[static_cast<size_t>(i)].array() += g.array();
    }
  }

  // Runs the reverse sweep from a scalar loss and returns the gradients of
  // every trainable leaf (zeros for leaves the loss does not reach). Frozen
  // leaves never appear in the result.
  GradMap backward(Index loss) {
    const Node& ln = nodes_[static_cast<size_t>(loss)];
    if (ln.value.size() != 1) {
      throw UsageError("backward: loss must be a scalar");
    }
    grads_.assign(nodes_.size(), Tensor<S>{});
    if (ln.requires_grad) {
      grads_[static_cast<size_t>(loss)] = Tensor<S>::constant(ln.value.shape(), S{1});
    }
    for (Index i = loss; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.is_leaf || !n.backward) continue;
      Tensor<S>& g = grads_[static_cast<size_t>(i)];
      if (g.empty()) continue;  // not on the loss path
      n.backward(*this, g);
      g = Tensor<S>{};  // release as soon as consumed
    }
    GradMap out;
    for (Index leaf : trainable_leaves_) {
      Tensor<S>& g = grads_[static_cast<size_t>(leaf)];
      out.emplace(leaf, g.empty() ? Tensor<S>::zeros(nodes_[static_cast<size_t>(leaf)].value.shape())
                                  : std::move(g));
    }
    grads_.clear();
    return out;
  }

 private:
  struct Node {
    Tensor<S> value;
    bool requires_grad;
    bool is_leaf;
    BackwardFn backward;
  };

  Index last_index() const { return static_cast<Index>(nodes_.size()) - 1; }

  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
  std::vector<Index> trainable_leaves_;
};

}  // namespace fedpt
