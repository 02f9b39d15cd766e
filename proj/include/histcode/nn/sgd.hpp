#pragma once

#include <vector>

#include "histcode/errors.hpp"
#include "histcode/nn/linalg.hpp"

namespace histcode::nn {

template <class S>
struct SgdConfig {
  S lr = S(0.03);
  S momentum = S(0.9);
  S weight_decay = S(1e-4);
};

/// One SGD-with-momentum step:
///   v <- momentum*v + g + weight_decay*theta;  theta <- theta - lr*v
/// With momentum 0 and decay 0 this is plain theta <- theta - lr*g.
template <class S>
inline void sgd_step(const std::vector<Param<S>*>& params,
                     const SgdConfig<S>& cfg) {
  for (Param<S>* p : params) {
    if (!all_finite(p->grad)) throw NonFinite("non-finite gradient");
    if (cfg.weight_decay != S(0))
      p->mom = cfg.momentum * p->mom + p->grad + cfg.weight_decay * p->value;
    else
      p->mom = cfg.momentum * p->mom + p->grad;
    p->value -= cfg.lr * p->mom;
  }
}

template <class S>
inline void zero_grads(const std::vector<Param<S>*>& params) {
  for (Param<S>* p : params) p->zero_grad();
}

}  // namespace histcode::nn
