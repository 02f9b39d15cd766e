#pragma once

#include <cstdint>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/nn/linalg.hpp"

namespace histcode::nn {

/// Fully connected layer, rows are samples. Caches its input for backward;
/// a layer instance therefore belongs to one training thread at a time.
template <class S>
struct Linear {
  Param<S> w;  // out x in
  Param<S> b;  // out x 1
  Mat<S> cache_x;

  Linear(Eigen::Index in, Eigen::Index out, Rng& rng) {
    w.resize(out, in);
    b.resize(out, 1);
    w.init_normal(rng, static_cast<double>(in));
  }

  Mat<S> forward(const Mat<S>& x, bool train = true) {
    if (x.cols() != w.value.cols())
      throw DimensionMismatch("linear input width mismatch");
    if (train) cache_x = x;
    Mat<S> y = x * w.value.transpose();
    y.rowwise() += b.value.col(0).transpose();
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    w.grad.noalias() += dy.transpose() * cache_x;
    b.grad.col(0) += dy.colwise().sum().transpose();
    return dy * w.value;
  }

  std::vector<Param<S>*> params_list() { return {&w, &b}; }
};

template <class S>
struct ReLU {
  Mat<S> cache_x;

  Mat<S> forward(const Mat<S>& x, bool train = true) {
    if (train) cache_x = x;
    return x.cwiseMax(S(0));
  }
  Mat<S> backward(const Mat<S>& dy) {
    return ((cache_x.array() > S(0)).template cast<S>() * dy.array())
        .matrix();
  }
};

/// Convolution with kernel == stride ("patchify"): each output cell sees a
/// disjoint input patch, so im2col is a pure gather and backward a pure
/// scatter with no overlap. Activations are rows of flattened CHW blocks.
template <class S>
struct PatchConv {
  int ci, hi, wi;  // input channels / height / width
  int co, p;       // output channels, patch edge
  int ho, wo;
  Param<S> w;  // co x (ci*p*p)
  Param<S> b;  // co x 1
  std::vector<Eigen::Index> gather;  // patch-row element -> input offset
  Mat<S> cache_patches;

  PatchConv(int ci_, int hi_, int wi_, int co_, int p_, Rng& rng)
      : ci(ci_), hi(hi_), wi(wi_), co(co_), p(p_) {
    if (hi % p != 0 || wi % p != 0)
      throw DimensionMismatch("patch size must divide input extent");
    ho = hi / p;
    wo = wi / p;
    w.resize(co, static_cast<Eigen::Index>(ci) * p * p);
    b.resize(co, 1);
    w.init_normal(rng, static_cast<double>(ci) * p * p);
    gather.resize(static_cast<std::size_t>(ho) * wo * ci * p * p);
    std::size_t g = 0;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int c = 0; c < ci; ++c)
          for (int ky = 0; ky < p; ++ky)
            for (int kx = 0; kx < p; ++kx)
              gather[g++] = (static_cast<Eigen::Index>(c) * hi +
                             (oy * p + ky)) *
                                wi +
                            (ox * p + kx);
  }

  Eigen::Index in_size() const {
    return static_cast<Eigen::Index>(ci) * hi * wi;
  }
  Eigen::Index out_size() const {
    return static_cast<Eigen::Index>(co) * ho * wo;
  }

  Mat<S> forward(const Mat<S>& x, bool train = true) {
    if (x.cols() != in_size())
      throw DimensionMismatch("patch conv input size mismatch");
    const Eigen::Index n = x.rows();
    const Eigen::Index cells = static_cast<Eigen::Index>(ho) * wo;
    const Eigen::Index plen = static_cast<Eigen::Index>(ci) * p * p;
    Mat<S> patches(n * cells, plen);
    for (Eigen::Index s = 0; s < n; ++s) {
      const S* src = x.row(s).data();
      for (Eigen::Index cell = 0; cell < cells; ++cell) {
        S* dst = patches.row(s * cells + cell).data();
        const Eigen::Index* idx = gather.data() + cell * plen;
        for (Eigen::Index t = 0; t < plen; ++t) dst[t] = src[idx[t]];
      }
    }
    if (train) cache_patches = patches;
    Mat<S> ycell = patches * w.value.transpose();  // (n*cells) x co
    ycell.rowwise() += b.value.col(0).transpose();
    // repack cell-major rows into CHW rows
    Mat<S> y(n, out_size());
    for (Eigen::Index s = 0; s < n; ++s)
      for (Eigen::Index cell = 0; cell < cells; ++cell)
        for (Eigen::Index c = 0; c < co; ++c)
          y(s, c * cells + cell) = ycell(s * cells + cell, c);
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    const Eigen::Index cells = static_cast<Eigen::Index>(ho) * wo;
    const Eigen::Index plen = static_cast<Eigen::Index>(ci) * p * p;
    const Eigen::Index n = dy.rows();
    Mat<S> dcell(n * cells, co);
    for (Eigen::Index s = 0; s < n; ++s)
      for (Eigen::Index cell = 0; cell < cells; ++cell)
        for (Eigen::Index c = 0; c < co; ++c)
          dcell(s * cells + cell, c) = dy(s, c * cells + cell);
    w.grad.noalias() += dcell.transpose() * cache_patches;
    b.grad.col(0) += dcell.colwise().sum().transpose();
    Mat<S> dpatches = dcell * w.value;  // (n*cells) x plen
    Mat<S> dx = Mat<S>::Zero(n, in_size());
    for (Eigen::Index s = 0; s < n; ++s) {
      S* dst = dx.row(s).data();
      for (Eigen::Index cell = 0; cell < cells; ++cell) {
        const S* src = dpatches.row(s * cells + cell).data();
        const Eigen::Index* idx = gather.data() + cell * plen;
        for (Eigen::Index t = 0; t < plen; ++t) dst[idx[t]] = src[t];
      }
    }
    return dx;
  }
};

}  // namespace histcode::nn
