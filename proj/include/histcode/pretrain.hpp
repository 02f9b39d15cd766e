#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "histcode/contrastive.hpp"
#include "histcode/errors.hpp"
#include "histcode/image.hpp"
#include "histcode/nn/augment.hpp"
#include "histcode/nn/encoder.hpp"
#include "histcode/nn/sgd.hpp"
#include "histcode/parallel.hpp"
#include "histcode/rng.hpp"
#include "histcode/tiling.hpp"

namespace histcode {

struct PretrainConfig {
  double tau = 0.12;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double bank_lr = 3.0;      // adversarial ascent rate
  int bank_size = 256;
  double bank_fraction = 0.1;  // per-slide sampling fraction for the seed
  int batch = 64;
  int epochs = 10;
  std::uint64_t seed = 0;
  int workers = 1;
  nn::AugmentConfig augment;
};

/// Tile access for training: per-slide coordinate lists plus a loader that
/// returns the (already color-normalized) tile. The loader must be safe to
/// call from several threads.
struct TilePool {
  std::vector<std::string> slide_ids;
  std::vector<std::vector<TileCoord>> coords;
  std::function<ImageRGB(std::size_t, const TileCoord&)> load;

  std::size_t total_tiles() const {
    std::size_t n = 0;
    for (const auto& c : coords) n += c.size();
    return n;
  }
};

struct StepLoss {
  std::int64_t step = 0;
  int epoch = 0;
  double loss = 0;
};

namespace detail {

struct TileRef {
  std::size_t slide = 0;
  TileCoord coord;
};

}  // namespace detail

/// Seeds the adversarial bank with projections of tiles sampled per slide
/// at the configured fraction (without replacement), then truncated to the
/// bank size after a seeded pool shuffle.
template <class S>
inline MemoryBank<S> init_bank(nn::Encoder<S>& enc, const TilePool& pool,
                               double fraction, int bank_size,
                               std::uint64_t seed, int workers = 1) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ConfigError("bank fraction must be in (0,1]");
  std::vector<detail::TileRef> refs;
  for (std::size_t s = 0; s < pool.coords.size(); ++s) {
    const auto& cs = pool.coords[s];
    auto want = static_cast<std::size_t>(
        std::lround(fraction * static_cast<double>(cs.size())));
    want = std::min(want, cs.size());
    std::vector<std::size_t> idx(cs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = make_rng(derive_seed(seed, "bank_slide"), s);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < want; ++i) refs.push_back({s, cs[idx[i]]});
  }
  if (refs.size() < static_cast<std::size_t>(bank_size))
    throw InsufficientTiles("bank needs " + std::to_string(bank_size) +
                            " tiles, sampled " + std::to_string(refs.size()));
  {
    Rng rng = make_rng(seed, "bank_pool");
    std::shuffle(refs.begin(), refs.end(), rng);
  }
  refs.resize(static_cast<std::size_t>(bank_size));

  const int e = nn::DeskEncoder<S>::kInputEdge;
  nn::Mat<S> x(bank_size, static_cast<Eigen::Index>(3) * e * e);
  parallel_for(refs.size(), workers, [&](std::size_t i) {
    ImageRGB tile = pool.load(refs[i].slide, refs[i].coord);
    nn::prep_tile(tile, x.row(static_cast<Eigen::Index>(i)).data());
  });
  MemoryBank<S> bank;
  bank.m = enc.project(enc.encode(x, false), false);
  return bank;
}

template <class S>
struct PretrainResult {
  nn::Encoder<S> encoder;
  MemoryBank<S> bank;
  std::vector<StepLoss> trace;
};

/// Alternating min-max training: every step descends the encoder (SGD with
/// momentum) and ascends the bank, with per-step losses recorded. The
/// optional callback fires after each epoch for checkpointing.
template <class S>
inline PretrainResult<S> pretrain(
    const PretrainConfig& cfg, const TilePool& pool,
    const std::function<void(int epoch, nn::Encoder<S>&, const MemoryBank<S>&,
                             std::int64_t step)>& on_epoch = {}) {
  const std::size_t total = pool.total_tiles();
  if (total == 0) throw InsufficientTiles("tile pool is empty");

  PretrainResult<S> out{nn::Encoder<S>::seeded(cfg.seed), {}, {}};
  nn::Encoder<S>& enc = out.encoder;
  out.bank = init_bank(enc, pool, cfg.bank_fraction, cfg.bank_size, cfg.seed,
                       cfg.workers);

  auto params = enc.params();
  nn::SgdConfig<S> opt{static_cast<S>(cfg.lr), static_cast<S>(cfg.momentum),
                       static_cast<S>(cfg.weight_decay)};
  const S tau = static_cast<S>(cfg.tau);
  const std::size_t batch =
      std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), total);
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, total / batch);
  const int edge = nn::DeskEncoder<S>::kInputEdge;
  std::int64_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // slide-major order, slides and within-slide tiles shuffled per epoch,
    // so each slide is decoded once per epoch by a caching loader
    std::vector<detail::TileRef> order;
    order.reserve(total);
    {
      Rng rng = make_rng(derive_seed(cfg.seed, "pretrain_order"),
                         static_cast<std::uint64_t>(epoch));
      std::vector<std::size_t> slides(pool.coords.size());
      std::iota(slides.begin(), slides.end(), std::size_t{0});
      std::shuffle(slides.begin(), slides.end(), rng);
      for (std::size_t s : slides) {
        std::vector<TileCoord> cs = pool.coords[s];
        std::shuffle(cs.begin(), cs.end(), rng);
        for (const TileCoord& c : cs) order.push_back({s, c});
      }
    }

    for (std::size_t bstep = 0; bstep < steps_per_epoch; ++bstep) {
      const std::size_t lo = bstep * batch;
      const std::size_t b = std::min(batch, total - lo);
      nn::Mat<S> x(static_cast<Eigen::Index>(2 * b),
                   static_cast<Eigen::Index>(3) * edge * edge);
      const std::uint64_t aug_base = derive_seed(cfg.seed, "augment_epoch");
      parallel_for(b, cfg.workers, [&](std::size_t i) {
        const detail::TileRef& ref = order[lo + i];
        ImageRGB tile = pool.load(ref.slide, ref.coord);
        auto views = nn::augment_pair(
            tile,
            derive_seed(aug_base, (static_cast<std::uint64_t>(epoch) << 40) ^
                                      (lo + i)),
            cfg.augment);
        nn::prep_tile(views.first, x.row(static_cast<Eigen::Index>(i)).data());
        nn::prep_tile(views.second,
                      x.row(static_cast<Eigen::Index>(b + i)).data());
      });

      try {
        nn::Mat<S> h = enc.encode(x, true);
        nn::Mat<S> q_all = enc.project(h, true);
        nn::Mat<S> q = q_all.topRows(static_cast<Eigen::Index>(b));
        nn::Mat<S> qp = q_all.bottomRows(static_cast<Eigen::Index>(b));
        auto fwd = contrastive_forward(q, qp, out.bank.m, tau);
        auto grads = contrastive_backward(q, qp, out.bank.m, tau, fwd);

        nn::Mat<S> dq_all(q_all.rows(), q_all.cols());
        dq_all.topRows(static_cast<Eigen::Index>(b)) = grads.dq;
        dq_all.bottomRows(static_cast<Eigen::Index>(b)) = grads.dq_pos;
        nn::zero_grads(params);
        enc.backbone.backward(enc.head.backward(dq_all));
        nn::sgd_step(params, opt);

        // adversarial side: ascend and renormalize
        out.bank.m += static_cast<S>(cfg.bank_lr) * grads.dbank;
        nn::l2_normalize_rows(out.bank.m);

        out.trace.push_back({step, epoch, static_cast<double>(fwd.loss)});
      } catch (const NonFinite& e) {
        throw NonFinite("pretrain step " + std::to_string(step) + ": " +
                        e.what());
      }
      ++step;
    }
    if (on_epoch) on_epoch(epoch, enc, out.bank, step);
  }
  return out;
}

}  // namespace histcode
