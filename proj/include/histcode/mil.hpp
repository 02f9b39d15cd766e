#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/metrics.hpp"
#include "histcode/nn/layers.hpp"
#include "histcode/nn/linalg.hpp"
#include "histcode/nn/sgd.hpp"
#include "histcode/rng.hpp"
#include "histcode/tiling.hpp"

namespace histcode {

/// All tiles of one slide as rows of an embedding matrix, plus the slide
/// label and the coordinate list aligned to the rows.
template <class S>
struct SlideBag {
  std::string slide_id;
  std::string patient_id;
  nn::Mat<S> h;  // L x D
  int label = 0;  // 0 normal, 1 tumor
  std::vector<TileCoord> coords;
};

namespace detail {

/// Shared reduction for every pooling path: z = H^T a. Mean pooling calls
/// this with uniform weights so "gated with w=0 equals mean" holds bitwise,
/// not just within tolerance.
template <class S>
inline nn::Vec<S> weighted_rowsum(const nn::Mat<S>& h, const nn::Vec<S>& a) {
  return h.transpose() * a;
}

}  // namespace detail

template <class S>
struct GatedAttentionResult {
  nn::Vec<S> z;  // D
  nn::Vec<S> a;  // L, nonneg, sums to 1
};

/// Gated-attention pooling:
///   a_i = softmax_i( w^T ( tanh(V h_i) ⊙ sigm(U h_i) ) ),  z = Σ a_i h_i
template <class S>
struct GatedAttention {
  nn::Param<S> v, u, w;  // A x D, A x D, A x 1

  // forward caches for the backward pass
  nn::Mat<S> cache_h, cache_t, cache_s;
  nn::Vec<S> cache_a;

  GatedAttention(Eigen::Index d, Eigen::Index a_dim, Rng& rng) {
    v.resize(a_dim, d);
    u.resize(a_dim, d);
    w.resize(a_dim, 1);
    v.init_normal(rng, static_cast<double>(d));
    u.init_normal(rng, static_cast<double>(d));
    w.init_normal(rng, static_cast<double>(a_dim));
  }

  GatedAttentionResult<S> forward(const nn::Mat<S>& h, bool train = true) {
    if (h.rows() < 1) throw DimensionMismatch("bag must hold >= 1 instance");
    if (h.cols() != v.value.cols())
      throw DimensionMismatch("bag embedding width mismatch");
    if (!nn::all_finite(h)) throw NonFinite("bag embeddings non-finite");
    nn::Mat<S> t = (h * v.value.transpose()).array().tanh();
    nn::Mat<S> s =
        ((-(h * u.value.transpose()).array()).exp() + S(1)).inverse();
    nn::Vec<S> e = (t.array() * s.array()).matrix() * w.value.col(0);
    // softmax over instances
    nn::Vec<S> a = (e.array() - e.maxCoeff()).exp();
    a /= a.sum();
    if (train) {
      cache_h = h;
      cache_t = t;
      cache_s = s;
      cache_a = a;
    }
    GatedAttentionResult<S> out;
    out.a = a;
    out.z = detail::weighted_rowsum(h, a);
    if (!nn::all_finite(out.z)) throw NonFinite("pooled feature non-finite");
    return out;
  }

  /// Accumulates parameter gradients; returns dL/dH.
  nn::Mat<S> backward(const nn::Vec<S>& dz) {
    const nn::Mat<S>& h = cache_h;
    const nn::Vec<S>& a = cache_a;
    nn::Vec<S> da = h * dz;               // from z = H^T a
    nn::Mat<S> dh = a * dz.transpose();   // L x D
    // softmax backward
    S inner = a.dot(da);
    nn::Vec<S> de = (a.array() * (da.array() - inner)).matrix();
    nn::Mat<S> g = (cache_t.array() * cache_s.array()).matrix();
    w.grad.col(0) += g.transpose() * de;
    nn::Mat<S> dg = de * w.value.col(0).transpose();  // L x A
    nn::Mat<S> dt = (dg.array() * cache_s.array() *
                     (S(1) - cache_t.array().square()))
                        .matrix();
    nn::Mat<S> ds = (dg.array() * cache_t.array() * cache_s.array() *
                     (S(1) - cache_s.array()))
                        .matrix();
    v.grad.noalias() += dt.transpose() * h;
    u.grad.noalias() += ds.transpose() * h;
    dh.noalias() += dt * v.value;
    dh.noalias() += ds * u.value;
    return dh;
  }

  std::vector<nn::Param<S>*> params() { return {&v, &u, &w}; }
};

template <class S>
inline nn::Vec<S> max_pool(const nn::Mat<S>& h) {
  if (h.rows() < 1) throw DimensionMismatch("bag must hold >= 1 instance");
  return h.colwise().maxCoeff().transpose();
}

template <class S>
inline nn::Vec<S> mean_pool(const nn::Mat<S>& h) {
  if (h.rows() < 1) throw DimensionMismatch("bag must hold >= 1 instance");
  nn::Vec<S> a = nn::Vec<S>::Constant(h.rows(),
                                      S(1) / static_cast<S>(h.rows()));
  return detail::weighted_rowsum(h, a);
}

/// Softmax probability of the tumor class from the two-node head.
template <class S>
inline S diagnose(const nn::Vec<S>& z, nn::Linear<S>& head,
                  bool train = false) {
  nn::Mat<S> logits = head.forward(z.transpose(), train);  // 1 x 2
  S mx = std::max(logits(0, 0), logits(0, 1));
  S e0 = std::exp(logits(0, 0) - mx), e1 = std::exp(logits(0, 1) - mx);
  return e1 / (e0 + e1);
}

/// Summed binary cross entropy with probabilities clamped at 1e-12.
template <class S>
inline S diagnosis_loss(const std::vector<int>& y, const std::vector<S>& p) {
  if (y.size() != p.size()) throw DimensionMismatch("loss batch mismatch");
  S total = S(0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    S pi = std::clamp(p[i], S(1e-12), S(1) - S(1e-12));
    total -= (y[i] == 1) ? std::log(pi) : std::log(S(1) - pi);
  }
  return total;
}

enum class PoolMode { kGated, kMean, kMax };

inline const char* pool_mode_name(PoolMode m) {
  switch (m) {
    case PoolMode::kGated: return "gated";
    case PoolMode::kMean: return "mean";
    case PoolMode::kMax: return "max";
  }
  return "?";
}

struct MilConfig {
  int attention_dim = 256;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int max_epochs = 60;
  int patience = 5;
  PoolMode pool = PoolMode::kGated;
  std::uint64_t seed = 0;
};

template <class S>
struct AttentionMap {
  std::string slide_id;
  std::vector<TileCoord> coords;
  std::vector<S> attention;
};

template <class S>
struct TrainedMil {
  GatedAttention<S> attention;
  nn::Linear<S> head;
  PoolMode pool = PoolMode::kGated;
  std::vector<double> val_auc_trace;
  int best_epoch = 0;

  TrainedMil(Eigen::Index d, int a_dim, Rng& rng)
      : attention(d, a_dim, rng), head(d, 2, rng) {}

  nn::Vec<S> pooled(const nn::Mat<S>& h, bool train) {
    switch (pool) {
      case PoolMode::kGated: return attention.forward(h, train).z;
      case PoolMode::kMean: return mean_pool(h);
      case PoolMode::kMax: return max_pool(h);
    }
    throw Error("bad pool mode");
  }

  S score(const SlideBag<S>& bag) {
    return diagnose(pooled(bag.h, false), head, false);
  }

  /// Attention profile used downstream for tile selection. Uniform for the
  /// non-attention pooling baselines.
  AttentionMap<S> attention_map(const SlideBag<S>& bag) {
    AttentionMap<S> out;
    out.slide_id = bag.slide_id;
    out.coords = bag.coords;
    if (pool == PoolMode::kGated) {
      auto res = attention.forward(bag.h, false);
      out.attention.assign(res.a.data(), res.a.data() + res.a.size());
    } else {
      out.attention.assign(static_cast<std::size_t>(bag.h.rows()),
                           S(1) / static_cast<S>(bag.h.rows()));
    }
    return out;
  }
};

namespace detail {

template <class S>
inline std::vector<nn::Mat<S>> snapshot(const std::vector<nn::Param<S>*>& ps) {
  std::vector<nn::Mat<S>> out;
  out.reserve(ps.size());
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

template <class S>
inline void restore(const std::vector<nn::Param<S>*>& ps,
                    const std::vector<nn::Mat<S>>& snap) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = snap[i];
}

}  // namespace detail

/// Trains the pooling head on frozen embeddings with early stopping on
/// validation AUC. The encoder never appears here, which is the frozen
/// contract: bags arrive as precomputed h rows.
template <class S>
inline TrainedMil<S> train_diagnosis(const std::vector<SlideBag<S>>& train,
                                     const std::vector<SlideBag<S>>& val,
                                     const MilConfig& cfg) {
  if (train.size() < 2) throw SingleClassSplit("need >= 2 training bags");
  bool has0 = false, has1 = false;
  for (const auto& b : train) (b.label == 1 ? has1 : has0) = true;
  if (!has0 || !has1)
    throw SingleClassSplit("training split holds a single class");
  const Eigen::Index d = train.front().h.cols();

  Rng rng = make_rng(cfg.seed, "train_diag");
  TrainedMil<S> model(d, cfg.attention_dim, rng);
  model.pool = cfg.pool;

  std::vector<nn::Param<S>*> params = model.head.params_list();
  if (cfg.pool == PoolMode::kGated) {
    auto ap = model.attention.params();
    params.insert(params.end(), ap.begin(), ap.end());
  }
  nn::SgdConfig<S> opt{static_cast<S>(cfg.lr), static_cast<S>(cfg.momentum),
                       static_cast<S>(cfg.weight_decay)};

  auto eval_auc = [&](const std::vector<SlideBag<S>>& bags) {
    std::vector<int> y;
    std::vector<double> p;
    for (const auto& b : bags) {
      y.push_back(b.label);
      p.push_back(static_cast<double>(model.score(b)));
    }
    return roc_auc(y, p);
  };
  const std::vector<SlideBag<S>>& monitor = val.empty() ? train : val;
  {
    bool v0 = false, v1 = false;
    for (const auto& b : monitor) (b.label == 1 ? v1 : v0) = true;
    if (!v0 || !v1)
      throw SingleClassSplit("validation split holds a single class");
  }

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_auc = -1;
  int since_best = 0;
  std::vector<nn::Mat<S>> best = detail::snapshot(params);

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t bi : order) {
      const SlideBag<S>& bag = train[bi];
      nn::zero_grads(params);
      nn::Vec<S> z = model.pooled(bag.h, true);
      nn::Mat<S> logits = model.head.forward(z.transpose(), true);
      S mx = std::max(logits(0, 0), logits(0, 1));
      S e0 = std::exp(logits(0, 0) - mx), e1 = std::exp(logits(0, 1) - mx);
      S denom = e0 + e1;
      nn::Mat<S> dlogits(1, 2);
      dlogits(0, 0) = e0 / denom - (bag.label == 0 ? S(1) : S(0));
      dlogits(0, 1) = e1 / denom - (bag.label == 1 ? S(1) : S(0));
      nn::Mat<S> dz = model.head.backward(dlogits);  // 1 x D
      if (cfg.pool == PoolMode::kGated)
        model.attention.backward(dz.row(0).transpose());
      nn::sgd_step(params, opt);
    }
    double auc = eval_auc(monitor);
    model.val_auc_trace.push_back(auc);
    if (auc > best_auc) {
      best_auc = auc;
      best = detail::snapshot(params);
      model.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  detail::restore(params, best);
  return model;
}

}  // namespace histcode
