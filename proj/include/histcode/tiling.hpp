#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "histcode/errors.hpp"
#include "histcode/image.hpp"
#include "histcode/otsu.hpp"

namespace histcode {

/// Top-left corner of a non-overlapping grid tile. x and y are multiples of
/// tile_px; the tile covers [x, x+tile_px) x [y, y+tile_px).
struct TileCoord {
  std::int32_t x = 0;
  std::int32_t y = 0;
  auto operator<=>(const TileCoord&) const = default;
};

struct SlideLabel {
  enum Value { kNormal = 0, kTumor = 1, kUnknown = 2 };
  static std::string name(int v) {
    switch (v) {
      case kNormal: return "normal";
      case kTumor: return "tumor";
      default: return "unknown";
    }
  }
  static int parse(const std::string& s) {
    if (s == "normal") return kNormal;
    if (s == "tumor") return kTumor;
    if (s == "unknown") return kUnknown;
    throw ConfigError("unknown slide label: " + s);
  }
};

/// Binary tissue mask at a fixed downsample of the slide. Cell (cx,cy)
/// covers slide pixels [cx*ds,(cx+1)*ds) x [cy*ds,(cy+1)*ds), clipped to the
/// slide extent; mask dims are ceil(slide dims / ds).
struct TissueMask {
  int downsample = 1;
  ImageGray mask;  // 0 background, 1 tissue
};

/// Non-overlapping grid coordinates covering the slide; partial edge tiles
/// are dropped. Result is sorted lexicographically by (y, x).
inline std::vector<TileCoord> tessellate(int width, int height, int tile_px) {
  if (tile_px <= 0) throw Error("tile_px must be positive");
  std::vector<TileCoord> out;
  if (width < tile_px || height < tile_px) return out;
  const int nx = width / tile_px, ny = height / tile_px;
  out.reserve(static_cast<std::size_t>(nx) * ny);
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix)
      out.push_back({ix * tile_px, iy * tile_px});
  return out;
}

/// Tissue detection on the inverted grayscale of a downsampled slide.
///
/// A cell is tissue when its inverted luma (255 - gray) clears the Otsu
/// split toward the dark class AND sits at least `guard` levels below
/// saturated white. If the whole dark class spans fewer than `guard` levels
/// past the split, the slide is treated as background-only (a near-blank
/// slide whose only contrast is sensor noise).
inline TissueMask detect_tissue(const ImageRGB& slide, int downsample,
                                int guard = 8) {
  if (downsample < 1) throw Error("downsample must be >= 1");
  TissueMask out;
  out.downsample = downsample;
  ImageGray small = box_downsample(to_gray(slide), downsample);
  ImageGray inv(small.width, small.height);
  for (std::size_t i = 0; i < small.data.size(); ++i)
    inv.data[i] = static_cast<std::uint8_t>(255 - small.data[i]);

  out.mask = ImageGray(small.width, small.height, 0);
  auto hist = intensity_histogram(inv);
  int nonzero = 0, vmax = 0;
  for (int i = 0; i < 256; ++i)
    if (hist[i] > 0) {
      ++nonzero;
      vmax = i;
    }
  if (nonzero < 2) return out;  // flat slide: nothing to split

  const int t = otsu_threshold(hist);
  if (vmax - t < guard) return out;
  for (std::size_t i = 0; i < inv.data.size(); ++i)
    out.mask.data[i] = (inv.data[i] > t && inv.data[i] >= guard) ? 1 : 0;
  return out;
}

/// Retains tiles whose tissue-positive pixel count at full slide resolution
/// is >= min_tissue_px. Mask cells are weighted by their exact pixel overlap
/// with the tile footprint, so the count is what an upsampled mask would
/// give. Order is preserved.
inline std::vector<TileCoord> filter_tiles(const std::vector<TileCoord>& coords,
                                           const TissueMask& tm, int tile_px,
                                           std::int64_t min_tissue_px) {
  const int ds = tm.downsample;
  std::vector<TileCoord> out;
  out.reserve(coords.size());
  for (const TileCoord& c : coords) {
    const int x1 = c.x + tile_px, y1 = c.y + tile_px;
    const int cx0 = c.x / ds, cy0 = c.y / ds;
    const int cx1 = std::min((x1 + ds - 1) / ds, tm.mask.width);
    const int cy1 = std::min((y1 + ds - 1) / ds, tm.mask.height);
    std::int64_t count = 0;
    for (int cy = cy0; cy < cy1; ++cy) {
      const int oy = std::min((cy + 1) * ds, y1) - std::max(cy * ds, c.y);
      for (int cx = cx0; cx < cx1; ++cx) {
        if (!tm.mask.at(cx, cy)) continue;
        const int ox = std::min((cx + 1) * ds, x1) - std::max(cx * ds, c.x);
        count += static_cast<std::int64_t>(ox) * oy;
      }
    }
    if (count >= min_tissue_px) out.push_back(c);
  }
  return out;
}

}  // namespace histcode
