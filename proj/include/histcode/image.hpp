#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "histcode/errors.hpp"

namespace histcode {

/// Interleaved 8-bit RGB raster, row-major.
struct ImageRGB {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // size = width*height*3

  ImageRGB() = default;
  ImageRGB(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* px(int x, int y) {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const std::uint8_t* px(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  bool operator==(const ImageRGB&) const = default;
};

/// Single-channel 8-bit raster (masks, grayscale).
struct ImageGray {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  ImageGray() = default;
  ImageGray(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  std::uint8_t at(int x, int y) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  bool operator==(const ImageGray&) const = default;
};

/// Interleaved float RGB raster, values nominally in [0,1].
struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  ImageF() = default;
  ImageF(int w, int h, float fill = 0.f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  float* px(int x, int y) {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  const float* px(int x, int y) const {
    return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

inline ImageF to_float(const ImageRGB& im) {
  ImageF out(im.width, im.height);
  const float k = 1.0f / 255.0f;
  for (std::size_t i = 0; i < im.data.size(); ++i) out.data[i] = im.data[i] * k;
  return out;
}

inline ImageRGB to_u8(const ImageF& im) {
  ImageRGB out(im.width, im.height);
  for (std::size_t i = 0; i < im.data.size(); ++i) {
    float v = std::clamp(im.data[i], 0.0f, 1.0f) * 255.0f;
    out.data[i] = static_cast<std::uint8_t>(std::lround(v));
  }
  return out;
}

inline ImageRGB crop(const ImageRGB& im, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || x + w > im.width || y + h > im.height)
    throw CoordOutOfBounds("crop region outside image bounds");
  ImageRGB out(w, h);
  for (int r = 0; r < h; ++r)
    std::memcpy(out.px(0, r), im.px(x, y + r), static_cast<std::size_t>(w) * 3);
  return out;
}

/// Rec.601 luma, rounded to nearest integer.
inline std::uint8_t luma(const std::uint8_t* rgb) {
  double v = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
  return static_cast<std::uint8_t>(std::lround(v));
}

inline ImageGray to_gray(const ImageRGB& im) {
  ImageGray out(im.width, im.height);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) out.at(x, y) = luma(im.px(x, y));
  return out;
}

/// Box-average downsample to ceil(dims/factor); edge cells average the
/// partial box that remains inside the image.
inline ImageGray box_downsample(const ImageGray& im, int factor) {
  if (factor < 1) throw Error("downsample factor must be >= 1");
  const int ow = (im.width + factor - 1) / factor;
  const int oh = (im.height + factor - 1) / factor;
  ImageGray out(ow, oh);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int x0 = ox * factor, y0 = oy * factor;
      const int x1 = std::min(x0 + factor, im.width);
      const int y1 = std::min(y0 + factor, im.height);
      long sum = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) sum += im.at(x, y);
      const long n = static_cast<long>(x1 - x0) * (y1 - y0);
      out.at(ox, oy) = static_cast<std::uint8_t>((sum + n / 2) / n);
    }
  }
  return out;
}

inline ImageRGB box_downsample(const ImageRGB& im, int factor) {
  if (factor < 1) throw Error("downsample factor must be >= 1");
  const int ow = (im.width + factor - 1) / factor;
  const int oh = (im.height + factor - 1) / factor;
  ImageRGB out(ow, oh);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const int x0 = ox * factor, y0 = oy * factor;
      const int x1 = std::min(x0 + factor, im.width);
      const int y1 = std::min(y0 + factor, im.height);
      long sum[3] = {0, 0, 0};
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < 3; ++c) sum[c] += im.px(x, y)[c];
      const long n = static_cast<long>(x1 - x0) * (y1 - y0);
      for (int c = 0; c < 3; ++c)
        out.px(ox, oy)[c] = static_cast<std::uint8_t>((sum[c] + n / 2) / n);
    }
  }
  return out;
}

inline ImageF bilinear_resize(const ImageF& im, int ow, int oh) {
  ImageF out(ow, oh);
  if (im.width == 0 || im.height == 0) return out;
  // Half-pixel-centered sampling, clamped at the borders.
  const float sx = static_cast<float>(im.width) / ow;
  const float sy = static_cast<float>(im.height) / oh;
  for (int y = 0; y < oh; ++y) {
    float fy = (y + 0.5f) * sy - 0.5f;
    int y0 = static_cast<int>(std::floor(fy));
    float wy = fy - y0;
    int y0c = std::clamp(y0, 0, im.height - 1);
    int y1c = std::clamp(y0 + 1, 0, im.height - 1);
    for (int x = 0; x < ow; ++x) {
      float fx = (x + 0.5f) * sx - 0.5f;
      int x0 = static_cast<int>(std::floor(fx));
      float wx = fx - x0;
      int x0c = std::clamp(x0, 0, im.width - 1);
      int x1c = std::clamp(x0 + 1, 0, im.width - 1);
      const float* p00 = im.px(x0c, y0c);
      const float* p10 = im.px(x1c, y0c);
      const float* p01 = im.px(x0c, y1c);
      const float* p11 = im.px(x1c, y1c);
      float* o = out.px(x, y);
      for (int c = 0; c < 3; ++c) {
        float top = p00[c] + (p10[c] - p00[c]) * wx;
        float bot = p01[c] + (p11[c] - p01[c]) * wx;
        o[c] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

inline void flip_horizontal(ImageF& im) {
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width / 2; ++x)
      for (int c = 0; c < 3; ++c)
        std::swap(im.px(x, y)[c], im.px(im.width - 1 - x, y)[c]);
}

inline void flip_vertical(ImageF& im) {
  for (int y = 0; y < im.height / 2; ++y)
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c)
        std::swap(im.px(x, y)[c], im.px(x, im.height - 1 - y)[c]);
}

/// 256-bin intensity histogram of a grayscale raster.
inline std::array<std::uint64_t, 256> intensity_histogram(const ImageGray& im) {
  std::array<std::uint64_t, 256> h{};
  for (std::uint8_t v : im.data) ++h[v];
  return h;
}

}  // namespace histcode
