#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "histcode/image.hpp"
#include "histcode/rng.hpp"

namespace histcode::nn {

/// The standard contrastive augmentation family: random resized crop
/// (area scale 0.2..1.0), flips, color jitter, random grayscale, Gaussian
/// blur. All knobs fixed here; the recipe is part of the training contract.
struct AugmentConfig {
  double scale_lo = 0.2, scale_hi = 1.0;
  double jitter = 0.4;        // brightness/contrast/saturation half-range
  double p_gray = 0.2;
  double p_blur = 0.5;
  double sigma_lo = 0.1, sigma_hi = 2.0;
};

namespace detail {

inline ImageF random_resized_crop(const ImageRGB& src, Rng& rng,
                                  const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double area = static_cast<double>(src.width) * src.height;
  int cw = src.width, ch = src.height, cx = 0, cy = 0;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = area * (cfg.scale_lo +
                            u01(rng) * (cfg.scale_hi - cfg.scale_lo));
    double log_ratio = std::log(3.0 / 4.0) +
                       u01(rng) * (std::log(4.0 / 3.0) - std::log(3.0 / 4.0));
    double ratio = std::exp(log_ratio);
    int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (w < 1 || h < 1 || w > src.width || h > src.height) continue;
    cw = w;
    ch = h;
    cx = static_cast<int>(u01(rng) * (src.width - w + 1));
    cy = static_cast<int>(u01(rng) * (src.height - h + 1));
    if (cx > src.width - w) cx = src.width - w;
    if (cy > src.height - h) cy = src.height - h;
    break;
  }
  ImageF cropped = to_float(crop(src, cx, cy, cw, ch));
  return bilinear_resize(cropped, src.width, src.height);
}

inline void color_jitter(ImageF& im, Rng& rng, const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> f(1.0 - cfg.jitter, 1.0 + cfg.jitter);
  const float brightness = static_cast<float>(f(rng));
  const float contrast = static_cast<float>(f(rng));
  const float saturation = static_cast<float>(f(rng));
  double mean = 0;
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      const float* p = im.px(x, y);
      mean += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  const float gray_mean =
      static_cast<float>(mean / (static_cast<double>(im.width) * im.height));
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      float* p = im.px(x, y);
      float g = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
      for (int c = 0; c < 3; ++c) {
        float v = p[c] * brightness;
        v = (v - gray_mean) * contrast + gray_mean;
        v = (v - g) * saturation + g;
        p[c] = v;
      }
    }
}

inline void to_grayscale(ImageF& im) {
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      float* p = im.px(x, y);
      float g = 0.299f * p[0] + 0.587f * p[1] + 0.114f * p[2];
      p[0] = p[1] = p[2] = g;
    }
}

inline void gaussian_blur(ImageF& im, double sigma) {
  const int radius = std::min(5, std::max(1, static_cast<int>(
                                                 std::ceil(2.5 * sigma))));
  std::vector<float> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (float& v : k) v = static_cast<float>(v / sum);

  ImageF tmp(im.width, im.height);
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      float acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        int xs = std::clamp(x + i, 0, im.width - 1);
        const float* p = im.px(xs, y);
        float w = k[static_cast<std::size_t>(i + radius)];
        for (int c = 0; c < 3; ++c) acc[c] += w * p[c];
      }
      float* o = tmp.px(x, y);
      for (int c = 0; c < 3; ++c) o[c] = acc[c];
    }
  for (int y = 0; y < im.height; ++y)
    for (int x = 0; x < im.width; ++x) {
      float acc[3] = {0, 0, 0};
      for (int i = -radius; i <= radius; ++i) {
        int ys = std::clamp(y + i, 0, im.height - 1);
        const float* p = tmp.px(x, ys);
        float w = k[static_cast<std::size_t>(i + radius)];
        for (int c = 0; c < 3; ++c) acc[c] += w * p[c];
      }
      float* o = im.px(x, y);
      for (int c = 0; c < 3; ++c) o[c] = acc[c];
    }
}

inline ImageRGB one_view(const ImageRGB& tile, Rng& rng,
                         const AugmentConfig& cfg) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ImageF v = random_resized_crop(tile, rng, cfg);
  if (u01(rng) < 0.5) flip_horizontal(v);
  if (u01(rng) < 0.5) flip_vertical(v);
  color_jitter(v, rng, cfg);
  if (u01(rng) < cfg.p_gray) to_grayscale(v);
  if (u01(rng) < cfg.p_blur) {
    std::uniform_real_distribution<double> s(cfg.sigma_lo, cfg.sigma_hi);
    gaussian_blur(v, s(rng));
  }
  return to_u8(v);
}

}  // namespace detail

/// Two independently augmented views of one tile; deterministic per seed.
inline std::pair<ImageRGB, ImageRGB> augment_pair(
    const ImageRGB& tile, std::uint64_t seed,
    const AugmentConfig& cfg = AugmentConfig{}) {
  Rng rng = make_rng(seed, "augment");
  ImageRGB a = detail::one_view(tile, rng, cfg);
  ImageRGB b = detail::one_view(tile, rng, cfg);
  return {std::move(a), std::move(b)};
}

}  // namespace histcode::nn
