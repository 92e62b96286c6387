#pragma once

#include <cmath>
#include <string>

#include "fedpt/tensor.hpp"

namespace fedpt {

enum class OptKind { sgd, sgdm, adam };

inline const char* opt_kind_name(OptKind k) {
  switch (k) {
    case OptKind::sgd: return "sgd";
    case OptKind::sgdm: return "sgdm";
    case OptKind::adam: return "adam";
  }
  return "?";
}

struct OptimizerConfig {
  OptKind kind = OptKind::sgd;
  double lr = 0.1;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

// First-order optimizer over a flat parameter vector. State buffers are
// sized |y| on first use; on the server the incoming "gradient" is the
// negated aggregate delta (the pseudo-gradient).
template <typename S>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    if (cfg_.lr < 0.0) throw ConfigError("optimizer: negative learning rate");
  }

  const OptimizerConfig& config() const { return cfg_; }
  int64_t steps() const { return t_; }

  void step(VectorX<S>& params, const VectorX<S>& grad) {
    if (params.size() != grad.size()) {
      throw DimensionError("optimizer: parameter/gradient length mismatch");
    }
    const S lr = static_cast<S>(cfg_.lr);
    switch (cfg_.kind) {
      case OptKind::sgd:
        params.noalias() -= lr * grad;
        break;
      case OptKind::sgdm: {
        ensure(m_, params.size());
        m_ = static_cast<S>(cfg_.momentum) * m_ + grad;
        params.noalias() -= lr * m_;
        break;
      }
      case OptKind::adam: {
        ensure(m_, params.size());
        ensure(v_, params.size());
        ++t_;
        const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
        m_ = b1 * m_ + (S{1} - b1) * grad;
        v_.array() = b2 * v_.array() + (S{1} - b2) * grad.array().square();
        const S c1 = S{1} - static_cast<S>(std::pow(cfg_.beta1, static_cast<double>(t_)));
        const S c2 = S{1} - static_cast<S>(std::pow(cfg_.beta2, static_cast<double>(t_)));
        params.array() -=
            lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + static_cast<S>(cfg_.eps));
        break;
      }
    }
    if (cfg_.kind != OptKind::adam) ++t_;
  }

 private:
  static void ensure(VectorX<S>& v, Eigen::Index n) {
    if (v.size() != n) v = VectorX<S>::Zero(n);
  }

  OptimizerConfig cfg_;
  VectorX<S> m_;
  VectorX<S> v_;
  int64_t t_ = 0;
};

}  // namespace fedpt
