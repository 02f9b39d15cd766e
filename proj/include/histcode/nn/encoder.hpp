#pragma once

#include <cstdint>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/hash.hpp"
#include "histcode/image.hpp"
#include "histcode/nn/layers.hpp"
#include "histcode/nn/linalg.hpp"

namespace histcode::nn {

/// Compact convolutional backbone: four patchify conv blocks over a 64x64
/// input, ending in a 1024-dim embedding (4*4*64). The heavier residual
/// backbone is a pluggable alternative behind the same encode/project
/// contract; this one trains in minutes on a CPU.
template <class S>
struct DeskEncoder {
  static constexpr int kInputEdge = 64;
  static constexpr Eigen::Index kEmbedDim = 1024;

  PatchConv<S> c1, c2, c3, c4;
  ReLU<S> r1, r2, r3, r4;

  explicit DeskEncoder(Rng& rng)
      : c1(3, 64, 64, 16, 2, rng),
        c2(16, 32, 32, 32, 2, rng),
        c3(32, 16, 16, 64, 2, rng),
        c4(64, 8, 8, 64, 2, rng) {}

  Mat<S> forward(const Mat<S>& x, bool train = true) {
    if (x.rows() == 0) throw DimensionMismatch("empty batch");
    Mat<S> h = r1.forward(c1.forward(x, train), train);
    h = r2.forward(c2.forward(h, train), train);
    h = r3.forward(c3.forward(h, train), train);
    h = r4.forward(c4.forward(h, train), train);
    if (!all_finite(h)) throw NonFinite("encoder produced non-finite values");
    return h;  // N x 1024
  }

  Mat<S> backward(const Mat<S>& dh) {
    Mat<S> d = c4.backward(r4.backward(dh));
    d = c3.backward(r3.backward(d));
    d = c2.backward(r2.backward(d));
    return c1.backward(r1.backward(d));
  }

  std::vector<Param<S>*> params() {
    return {&c1.w, &c1.b, &c2.w, &c2.b, &c3.w, &c3.b, &c4.w, &c4.b};
  }
};

/// Two fully connected layers ending in a row-wise L2 normalization.
template <class S>
struct ProjectionHead {
  static constexpr Eigen::Index kProjDim = 128;

  Linear<S> fc1, fc2;
  ReLU<S> relu;
  Mat<S> cache_q;
  Vec<S> cache_norms;

  explicit ProjectionHead(Rng& rng)
      : fc1(DeskEncoder<S>::kEmbedDim, DeskEncoder<S>::kEmbedDim, rng),
        fc2(DeskEncoder<S>::kEmbedDim, kProjDim, rng) {}

  Mat<S> forward(const Mat<S>& h, bool train = true) {
    Mat<S> u = fc2.forward(relu.forward(fc1.forward(h, train), train), train);
    Vec<S> norms = l2_normalize_rows(u);  // throws on zero rows
    if (train) {
      cache_q = u;
      cache_norms = norms;
    }
    return u;
  }

  Mat<S> backward(const Mat<S>& dq) {
    Mat<S> du = l2_normalize_backward(cache_q, dq, cache_norms);
    return fc1.backward(relu.backward(fc2.backward(du)));
  }

  std::vector<Param<S>*> params() {
    return {&fc1.w, &fc1.b, &fc2.w, &fc2.b};
  }
};

/// Backbone + projection head with a fixed seeded initialization order.
template <class S>
struct Encoder {
  DeskEncoder<S> backbone;
  ProjectionHead<S> head;

  explicit Encoder(Rng& rng) : backbone(rng), head(rng) {}

  static Encoder seeded(std::uint64_t seed) {
    Rng rng = make_rng(seed, "encoder_init");
    return Encoder(rng);
  }

  Mat<S> encode(const Mat<S>& x, bool train = true) {
    return backbone.forward(x, train);
  }
  Mat<S> project(const Mat<S>& h, bool train = true) {
    return head.forward(h, train);
  }

  std::vector<Param<S>*> params() {
    auto p = backbone.params();
    auto q = head.params();
    p.insert(p.end(), q.begin(), q.end());
    return p;
  }

  /// Content hash of all parameter values; the frozen-encoder contract in
  /// downstream training is asserted with this.
  std::uint64_t checksum() {
    Fnv64 h;
    for (Param<S>* p : params())
      h.update(p->value.data(),
               static_cast<std::size_t>(p->value.size()) * sizeof(S));
    return h.digest();
  }
};

/// Flattens a tile to the encoder input row: box-average to 64x64 (tile_px
/// must be a multiple of 64), scale to [0,1], CHW order.
template <class S>
inline void prep_tile(const ImageRGB& tile, S* out_row) {
  const ImageRGB* small = &tile;
  ImageRGB shrunk;
  if (tile.width != DeskEncoder<S>::kInputEdge ||
      tile.height != DeskEncoder<S>::kInputEdge) {
    if (tile.width % DeskEncoder<S>::kInputEdge != 0 || tile.width != tile.height)
      throw DimensionMismatch("tile edge must be a multiple of 64");
    shrunk = box_downsample(tile, tile.width / DeskEncoder<S>::kInputEdge);
    small = &shrunk;
  }
  const int e = DeskEncoder<S>::kInputEdge;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < e; ++y)
      for (int x = 0; x < e; ++x)
        out_row[(c * e + y) * e + x] =
            static_cast<S>(small->px(x, y)[c] / S(255));
}

template <class S>
inline Mat<S> prep_batch(const std::vector<ImageRGB>& tiles) {
  if (tiles.empty()) throw DimensionMismatch("empty batch");
  const int e = DeskEncoder<S>::kInputEdge;
  Mat<S> x(static_cast<Eigen::Index>(tiles.size()),
           static_cast<Eigen::Index>(3) * e * e);
  for (std::size_t i = 0; i < tiles.size(); ++i)
    prep_tile(tiles[i], x.row(static_cast<Eigen::Index>(i)).data());
  return x;
}

}  // namespace histcode::nn
