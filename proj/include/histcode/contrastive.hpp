#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/nn/linalg.hpp"

namespace histcode {

/// Learnable negatives. Rows live on the unit sphere; after each ascent
/// step they are pulled back onto it.
template <class S>
struct MemoryBank {
  nn::Mat<S> m;  // K x P, unit rows

  Eigen::Index size() const { return m.rows(); }
};

template <class S>
struct ContrastiveOut {
  S loss = S(0);
  // softmax responsibilities, kept for the backward pass
  nn::Vec<S> p_pos;   // N
  nn::Mat<S> p_neg;   // N x K
};

/// L = -(1/N) sum_i log[ exp(q_i.q'_i/tau) /
///                       (exp(q_i.q'_i/tau) + sum_k exp(q_i.m_k/tau)) ]
/// computed through a per-row log-sum-exp.
template <class S>
inline ContrastiveOut<S> contrastive_forward(const nn::Mat<S>& q,
                                             const nn::Mat<S>& q_pos,
                                             const nn::Mat<S>& bank, S tau) {
  if (q.rows() != q_pos.rows() || q.cols() != q_pos.cols() ||
      q.cols() != bank.cols())
    throw DimensionMismatch("contrastive shapes disagree");
  if (q.rows() == 0 || bank.rows() == 0)
    throw DimensionMismatch("need at least one sample and one negative");
  if (!(tau > S(0))) throw ConfigError("temperature must be positive");
  if (!nn::all_finite(q) || !nn::all_finite(q_pos) || !nn::all_finite(bank))
    throw NonFinite("contrastive inputs must be finite");

  const Eigen::Index n = q.rows(), k = bank.rows();
  nn::Vec<S> s_pos(n);
  for (Eigen::Index i = 0; i < n; ++i)
    s_pos[i] = q.row(i).dot(q_pos.row(i)) / tau;
  nn::Mat<S> s_neg = (q * bank.transpose()) / tau;  // N x K

  ContrastiveOut<S> out;
  out.p_pos.resize(n);
  out.p_neg.resize(n, k);
  S total = S(0);
  for (Eigen::Index i = 0; i < n; ++i) {
    S mx = std::max(s_pos[i], s_neg.row(i).maxCoeff());
    S e_pos = std::exp(s_pos[i] - mx);
    S denom = e_pos;
    for (Eigen::Index j = 0; j < k; ++j) {
      S e = std::exp(s_neg(i, j) - mx);
      out.p_neg(i, j) = e;
      denom += e;
    }
    out.p_pos[i] = e_pos / denom;
    out.p_neg.row(i) /= denom;
    total += std::log(denom) - (s_pos[i] - mx);  // = lse - s_pos
  }
  out.loss = total / static_cast<S>(n);
  if (!std::isfinite(static_cast<double>(out.loss)))
    throw NonFinite("contrastive loss is non-finite");
  return out;
}

template <class S>
inline S contrastive_loss(const nn::Mat<S>& q, const nn::Mat<S>& q_pos,
                          const nn::Mat<S>& bank, S tau) {
  return contrastive_forward(q, q_pos, bank, tau).loss;
}

template <class S>
struct ContrastiveGrads {
  nn::Mat<S> dq;      // N x P
  nn::Mat<S> dq_pos;  // N x P
  nn::Mat<S> dbank;   // K x P
};

/// Analytic gradients of the loss above:
///   dL/dq_i   = (1/(N tau)) [ -(1-p_pos_i) q'_i + sum_k p_ik m_k ]
///   dL/dq'_i  = -(1/(N tau)) (1-p_pos_i) q_i
///   dL/dm_k   =  (1/(N tau)) sum_i p_ik q_i
template <class S>
inline ContrastiveGrads<S> contrastive_backward(const nn::Mat<S>& q,
                                                const nn::Mat<S>& q_pos,
                                                const nn::Mat<S>& bank, S tau,
                                                const ContrastiveOut<S>& out) {
  const Eigen::Index n = q.rows();
  const S scale = S(1) / (static_cast<S>(n) * tau);
  ContrastiveGrads<S> g;
  g.dq = scale * (out.p_neg * bank);
  g.dq_pos.resizeLike(q);
  for (Eigen::Index i = 0; i < n; ++i) {
    S c = scale * (S(1) - out.p_pos[i]);
    g.dq.row(i) -= c * q_pos.row(i);
    g.dq_pos.row(i) = -c * q.row(i);
  }
  g.dbank = scale * (out.p_neg.transpose() * q);
  return g;
}

/// Gradient ascent on the bank (the adversarial side of the min-max game),
/// followed by row re-normalization. lambda = 0 leaves the bank unchanged.
template <class S>
inline void update_negatives(MemoryBank<S>& bank, const nn::Mat<S>& q,
                             const nn::Mat<S>& q_pos, S tau, S lambda) {
  auto out = contrastive_forward(q, q_pos, bank.m, tau);
  auto grads = contrastive_backward(q, q_pos, bank.m, tau, out);
  if (!nn::all_finite(grads.dbank)) throw NonFinite("bank gradient");
  if (lambda == S(0)) return;
  bank.m += lambda * grads.dbank;
  nn::l2_normalize_rows(bank.m);
}

}  // namespace histcode
