#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "histcode/errors.hpp"
#include "histcode/image.hpp"

namespace histcode {

/// Per-channel mean/std in the decorrelated log color space.
struct ChannelStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};

namespace lab {

// Decorrelated log-opponent color space: RGB -> LMS cone response, log10,
// then an opponent rotation into (lightness, yellow-blue, red-green). The
// rotation is orthogonal up to the stated diagonal scaling, so the inverse
// is exact.
inline constexpr double kRgb2Lms[3][3] = {{0.3811, 0.5783, 0.0402},
                                          {0.1967, 0.7244, 0.0782},
                                          {0.0241, 0.1288, 0.8444}};
inline constexpr double kLms2Rgb[3][3] = {{4.4679, -3.5873, 0.1193},
                                          {-1.2186, 2.3809, -0.1624},
                                          {0.0497, -0.2439, 1.2045}};
inline constexpr double kLogFloor = 1.0 / 255.0;  // keeps log finite on black

inline void rgb_to_lab(const double rgb[3], double out[3]) {
  double lms[3];
  for (int i = 0; i < 3; ++i) {
    lms[i] = kRgb2Lms[i][0] * rgb[0] + kRgb2Lms[i][1] * rgb[1] +
             kRgb2Lms[i][2] * rgb[2];
    lms[i] = std::log10(lms[i] < kLogFloor ? kLogFloor : lms[i]);
  }
  constexpr double s3 = 0.57735026918962576;  // 1/sqrt(3)
  constexpr double s6 = 0.40824829046386302;  // 1/sqrt(6)
  constexpr double s2 = 0.70710678118654752;  // 1/sqrt(2)
  out[0] = s3 * (lms[0] + lms[1] + lms[2]);
  out[1] = s6 * (lms[0] + lms[1] - 2.0 * lms[2]);
  out[2] = s2 * (lms[0] - lms[1]);
}

inline void lab_to_rgb(const double lab[3], double out[3]) {
  constexpr double s3 = 0.57735026918962576;
  constexpr double s6 = 0.40824829046386302;
  constexpr double s2 = 0.70710678118654752;
  double lms[3];
  lms[0] = s3 * lab[0] + s6 * lab[1] + s2 * lab[2];
  lms[1] = s3 * lab[0] + s6 * lab[1] - s2 * lab[2];
  lms[2] = s3 * lab[0] - 2.0 * s6 * lab[1];
  for (int i = 0; i < 3; ++i) lms[i] = std::pow(10.0, lms[i]);
  for (int i = 0; i < 3; ++i)
    out[i] = kLms2Rgb[i][0] * lms[0] + kLms2Rgb[i][1] * lms[1] +
             kLms2Rgb[i][2] * lms[2];
}

}  // namespace lab

/// Channel statistics of an 8-bit tile in the decorrelated space.
inline ChannelStats compute_stain_stats(const ImageRGB& tile) {
  ChannelStats st;
  const std::size_t n = static_cast<std::size_t>(tile.width) * tile.height;
  if (n == 0) throw Error("empty tile");
  std::array<double, 3> sum{}, sumsq{};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = tile.data.data() + i * 3;
    double rgb[3] = {p[0] / 255.0, p[1] / 255.0, p[2] / 255.0};
    double v[3];
    lab::rgb_to_lab(rgb, v);
    for (int c = 0; c < 3; ++c) {
      sum[c] += v[c];
      sumsq[c] += v[c] * v[c];
    }
  }
  for (int c = 0; c < 3; ++c) {
    st.mean[c] = sum[c] / static_cast<double>(n);
    double var = sumsq[c] / static_cast<double>(n) - st.mean[c] * st.mean[c];
    st.stddev[c] = std::sqrt(var > 0 ? var : 0.0);
  }
  return st;
}

struct StainResult {
  ImageRGB tile;
  bool uniform = false;  // zero-variance input was passed through unchanged
};

/// Float-precision output of the stain transform before 8-bit quantization:
/// unclamped linear RGB in [0,1] nominal range. Per-channel statistics in
/// the decorrelated space equal the reference exactly up to rounding.
inline ImageF normalize_stain_f(const ImageRGB& tile, const ChannelStats& ref) {
  for (int c = 0; c < 3; ++c) {
    if (!std::isfinite(ref.mean[c]) || !std::isfinite(ref.stddev[c]) ||
        ref.stddev[c] <= 0)
      throw Error("reference stain stats must be finite with positive std");
  }
  const ChannelStats src = compute_stain_stats(tile);
  for (int c = 0; c < 3; ++c)
    if (src.stddev[c] < 1e-12)
      throw NumericalDegeneracy("uniform tile");  // caller handles pass-through
  ImageF out(tile.width, tile.height);
  const std::size_t n = static_cast<std::size_t>(tile.width) * tile.height;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = tile.data.data() + i * 3;
    double rgb[3] = {p[0] / 255.0, p[1] / 255.0, p[2] / 255.0};
    double v[3];
    lab::rgb_to_lab(rgb, v);
    for (int c = 0; c < 3; ++c)
      v[c] = (v[c] - src.mean[c]) / src.stddev[c] * ref.stddev[c] + ref.mean[c];
    double back[3];
    lab::lab_to_rgb(v, back);
    float* o = out.data.data() + i * 3;
    for (int c = 0; c < 3; ++c) o[c] = static_cast<float>(back[c]);
  }
  return out;
}

/// Reinhard-style mean/std matching against the reference statistics.
/// Constant-color tiles come back unchanged with the uniform flag set.
inline StainResult normalize_stain(const ImageRGB& tile,
                                   const ChannelStats& ref) {
  try {
    ImageF f = normalize_stain_f(tile, ref);
    return {to_u8(f), false};
  } catch (const NumericalDegeneracy&) {
    return {tile, true};
  }
}

/// The fixed reference tile. data/reference_tile.png in the repository is a
/// byte-exact dump of this image (pinned by a test); generating it here keeps
/// the pipeline free of a runtime file dependency for the default reference.
inline ImageRGB make_reference_tile() {
  ImageRGB tile(256, 256);
  const double pink[3] = {232.0, 182.0, 205.0};
  const double purple[3] = {118.0, 62.0, 158.0};
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 256; ++x) {
      // fixed quasi-periodic blend, roughly H&E-hued with broad variance
      double t = 0.5 + 0.28 * std::sin(0.071 * x + 0.9) *
                           std::cos(0.053 * y - 0.4) +
                 0.22 * std::sin(0.013 * (x + 2.0 * y));
      if (t < 0) t = 0;
      if (t > 1) t = 1;
      std::uint8_t* p = tile.px(x, y);
      for (int c = 0; c < 3; ++c) {
        double v = pink[c] + t * (purple[c] - pink[c]);
        p[c] = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return tile;
}

inline const ChannelStats& default_reference_stats() {
  static const ChannelStats st = compute_stain_stats(make_reference_tile());
  return st;
}

}  // namespace histcode
