#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "histcode/diffexpr.hpp"
#include "histcode/errors.hpp"
#include "histcode/image.hpp"
#include "histcode/nn/linalg.hpp"
#include "histcode/tiling.hpp"

namespace histcode {

/// Per-tile scores for one slide, aligned to manifest coordinates.
struct ScoreMap {
  std::string slide_id;
  std::string score_kind;  // "diagnosis_attention" or "gene_saliency:<sym>"
  std::vector<TileCoord> coords;
  std::vector<double> scores;
};

/// Min-max to [0,1]; a constant input maps to all 0.5 so downstream color
/// mapping stays defined.
inline std::vector<double> normalize_scores(const std::vector<double>& s) {
  if (s.empty()) throw TooFewValues("normalize_scores on empty input");
  double lo = s[0], hi = s[0];
  for (double v : s) {
    if (!std::isfinite(v)) throw NonFinite("score is non-finite");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> out(s.size());
  if (lo == hi) {
    std::fill(out.begin(), out.end(), 0.5);
    return out;
  }
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = (s[i] - lo) / (hi - lo);
  return out;
}

namespace heat {

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Color&) const = default;
  auto operator<=>(const Color&) const = default;
};

/// 256-entry dark-to-hot ramp. Entries are forced pairwise distinct so a
/// rendered heatmap can be inverted exactly back to score indices.
inline const std::array<Color, 256>& colormap() {
  static const std::array<Color, 256> lut = [] {
    // control points of an inferno-like ramp
    constexpr double pts[][4] = {
        {0.00, 0, 0, 4},       {0.15, 40, 11, 84},   {0.30, 101, 21, 110},
        {0.45, 159, 42, 99},   {0.60, 212, 72, 66},  {0.75, 245, 125, 21},
        {0.90, 250, 193, 39},  {1.00, 252, 255, 164}};
    constexpr int npts = static_cast<int>(sizeof(pts) / sizeof(pts[0]));
    std::array<Color, 256> out{};
    for (int i = 0; i < 256; ++i) {
      double t = i / 255.0;
      int seg = 0;
      while (seg + 2 < npts && t > pts[seg + 1][0]) ++seg;
      double f = (t - pts[seg][0]) / (pts[seg + 1][0] - pts[seg][0]);
      f = std::clamp(f, 0.0, 1.0);
      auto lerp = [&](int c) {
        return pts[seg][c] + f * (pts[seg + 1][c] - pts[seg][c]);
      };
      out[static_cast<std::size_t>(i)] = {
          static_cast<std::uint8_t>(std::lround(lerp(1))),
          static_cast<std::uint8_t>(std::lround(lerp(2))),
          static_cast<std::uint8_t>(std::lround(lerp(3)))};
    }
    // interpolation + rounding can collide on neighbors; nudge blue until
    // every entry is unique (deterministic, at most a 1-2 step walk)
    std::map<Color, int> seen;
    for (int i = 0; i < 256; ++i) {
      Color& c = out[static_cast<std::size_t>(i)];
      while (seen.count(c)) {
        if (c.b < 255)
          c.b = static_cast<std::uint8_t>(c.b + 1);
        else if (c.g < 255)
          c.g = static_cast<std::uint8_t>(c.g + 1);
        else
          c.r = static_cast<std::uint8_t>(c.r + 1);
      }
      seen.emplace(c, i);
    }
    return out;
  }();
  return lut;
}

/// Exact inverse of colormap(); -1 for colors outside the LUT.
inline int colormap_index(Color c) {
  static const std::map<Color, int> inv = [] {
    std::map<Color, int> m;
    const auto& lut = colormap();
    for (int i = 0; i < 256; ++i) m.emplace(lut[static_cast<std::size_t>(i)], i);
    return m;
  }();
  auto it = inv.find(c);
  return it == inv.end() ? -1 : it->second;
}

inline constexpr std::uint8_t kBackgroundGray = 225;

}  // namespace heat

/// Paints each tile footprint with the color of its normalized score.
/// Scores are quantized to round(s*255) LUT indices; with the lossless LUT
/// the rendered image determines every tile's quantized score.
inline ImageRGB render_heatmap(const ScoreMap& map, int slide_w, int slide_h,
                               int tile_px, int downsample) {
  if (downsample < 1) throw ConfigError("downsample must be >= 1");
  if (map.coords.size() != map.scores.size())
    throw DimensionMismatch("score map coords/scores disagree");
  const int ow = (slide_w + downsample - 1) / downsample;
  const int oh = (slide_h + downsample - 1) / downsample;
  ImageRGB out(ow, oh, heat::kBackgroundGray);
  const std::vector<double> norm = normalize_scores(map.scores);
  const auto& lut = heat::colormap();
  for (std::size_t i = 0; i < map.coords.size(); ++i) {
    const TileCoord& tc = map.coords[i];
    if (tc.x < 0 || tc.y < 0 || tc.x + tile_px > slide_w ||
        tc.y + tile_px > slide_h)
      throw CoordOutOfBounds("tile outside slide bounds");
    int idx = static_cast<int>(std::lround(norm[i] * 255.0));
    heat::Color c = lut[static_cast<std::size_t>(std::clamp(idx, 0, 255))];
    int x0 = tc.x / downsample, x1 = (tc.x + tile_px) / downsample;
    int y0 = tc.y / downsample, y1 = (tc.y + tile_px) / downsample;
    x1 = std::min(x1, ow);
    y1 = std::min(y1, oh);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        std::uint8_t* p = out.px(x, y);
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
      }
  }
  return out;
}

/// Linear saliency proxy for a gene model: the regression weight vector is
/// split into its top-block and bottom-block halves and each tile is scored
/// by (w_top - w_bottom).h_i, then min-max normalized. For the two-node
/// classifier the difference of the class weight rows plays the role of w.
template <class S>
inline std::vector<double> gene_saliency(const nn::Mat<S>& h,
                                         const GeneModel& model) {
  const Eigen::Index d = h.cols();
  nn::Vec<double> w_eff;
  if (model.mode == DEMode::kRegression) {
    if (model.w.size() != 2 * d)
      throw DimensionMismatch("gene model was trained on 2D features");
    w_eff = model.w;
  } else {
    if (model.w.size() != 4 * d)
      throw DimensionMismatch("gene model was trained on 2D features");
    w_eff = model.w.tail(2 * d) - model.w.head(2 * d);
  }
  nn::Vec<double> dir = w_eff.head(d) - w_eff.tail(d);
  std::vector<double> raw(static_cast<std::size_t>(h.rows()));
  for (Eigen::Index i = 0; i < h.rows(); ++i)
    raw[static_cast<std::size_t>(i)] =
        h.row(i).template cast<double>().dot(dir);
  return normalize_scores(raw);
}

// ---- tile gallery ----

struct GalleryEntry {
  int rank = 0;
  TileCoord coord;
  double score = 0;
};

struct Gallery {
  ImageRGB top;
  ImageRGB bottom;
  std::vector<GalleryEntry> top_entries;
  std::vector<GalleryEntry> bottom_entries;
};

namespace heat {

/// 5x7 bitmap glyphs for gallery captions.
inline const std::uint8_t* glyph5x7(char ch) {
  static const std::map<char, std::array<std::uint8_t, 7>> font = {
      {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
      {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
      {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
      {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
      {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
      {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
      {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
      {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
      {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
      {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
      {',', {0x00, 0x00, 0x00, 0x00, 0x0c, 0x04, 0x08}},
      {'-', {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00}},
      {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
      {'x', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11}},
      {'y', {0x00, 0x00, 0x11, 0x0a, 0x04, 0x04, 0x08}},
      {'s', {0x00, 0x00, 0x0f, 0x10, 0x0e, 0x01, 0x1e}},
      {'e', {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e}},
      {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}}};
  auto it = font.find(ch);
  return it == font.end() ? font.at(' ').data() : it->second.data();
}

inline void draw_text(ImageRGB& im, int x, int y, const std::string& text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    const std::uint8_t* rows = glyph5x7(text[i]);
    int gx = x + static_cast<int>(i) * 6;
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 5; ++c) {
        if (!((rows[r] >> (4 - c)) & 1)) continue;
        int px = gx + c, py = y + r;
        if (px < 0 || py < 0 || px >= im.width || py >= im.height) continue;
        std::uint8_t* p = im.px(px, py);
        p[0] = p[1] = p[2] = 0;
      }
  }
}

}  // namespace heat

/// Crops the n highest- and n lowest-score tiles into two captioned grids.
/// Ties break toward the lower index, same as tile selection.
inline Gallery tile_gallery(const ImageRGB& slide, const ScoreMap& map,
                            int tile_px, std::size_t n) {
  if (map.coords.size() != map.scores.size())
    throw DimensionMismatch("score map coords/scores disagree");
  if (n == 0 || n > map.coords.size())
    throw Error("gallery size must be in [1, L]");
  std::vector<std::size_t> idx(map.coords.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto desc = idx, asc = idx;
  std::sort(desc.begin(), desc.end(), [&](std::size_t p, std::size_t q) {
    if (map.scores[p] != map.scores[q]) return map.scores[p] > map.scores[q];
    return p < q;
  });
  std::sort(asc.begin(), asc.end(), [&](std::size_t p, std::size_t q) {
    if (map.scores[p] != map.scores[q]) return map.scores[p] < map.scores[q];
    return p < q;
  });

  const int caption_h = 12;
  const int cols = static_cast<int>(
      std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = static_cast<int>((n + cols - 1) / static_cast<std::size_t>(cols));
  auto build = [&](const std::vector<std::size_t>& order,
                   std::vector<GalleryEntry>& entries) {
    ImageRGB grid(cols * tile_px, rows * (tile_px + caption_h), 255);
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t ti = order[r];
      const TileCoord& tc = map.coords[ti];
      ImageRGB tile = crop(slide, tc.x, tc.y, tile_px, tile_px);
      int gx = (static_cast<int>(r) % cols) * tile_px;
      int gy = (static_cast<int>(r) / cols) * (tile_px + caption_h);
      for (int y = 0; y < tile_px; ++y)
        std::copy_n(tile.px(0, y), static_cast<std::size_t>(tile_px) * 3,
                    grid.px(gx, gy + y));
      char buf[64];
      std::snprintf(buf, sizeof(buf), "x=%d y=%d s=%.4f", tc.x, tc.y,
                    map.scores[ti]);
      heat::draw_text(grid, gx + 2, gy + tile_px + 2, buf);
      entries.push_back({static_cast<int>(r), tc, map.scores[ti]});
    }
    return grid;
  };
  Gallery g;
  g.top = build(desc, g.top_entries);
  g.bottom = build(asc, g.bottom_entries);
  return g;
}

}  // namespace histcode
